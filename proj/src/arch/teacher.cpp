#include "arch/teacher.hpp"

#include <stdexcept>

namespace dfkd {
namespace arch {

// ---- ResNetClassifier ----

ResNetClassifier::ResNetClassifier(const TeacherSpec& spec_, const BackbonePlan& plan, Rng& rng)
    : backbone(plan, rng), fc(plan.final_channels(), spec_.num_classes), spec(spec_) {
    fc.init_kaiming(rng);
}

void ResNetClassifier::collect(nn::Registry& r, const std::string& prefix) {
    backbone.collect(r, nn::join_name(prefix, "backbone"));
    fc.collect(r, nn::join_name(prefix, "fc"));
}

void ResNetClassifier::set_training(bool on) { backbone.set_training(on); }

namespace {
// Forward through a BasicBlock with optional stat capture on every BN.
Var block_forward_capture(BasicBlock& b, Tape& t, const Var& x, std::vector<nn::BnObservation>* obs) {
    auto bn_fwd = [&](nn::BatchNorm2d& bn, const Var& v) {
        if (!obs) return bn.forward(t, v);
        obs->emplace_back();
        return bn.forward_observe(t, v, &obs->back());
    };
    Var y = ops::relu(bn_fwd(b.bn1, b.conv1.forward(t, x)));
    y = bn_fwd(b.bn2, b.conv2.forward(t, y));
    Var shortcut = b.has_projection ? bn_fwd(b.proj_bn, b.proj_conv.forward(t, x)) : x;
    return ops::relu(ops::add(y, shortcut));
}
} // namespace

NetOutput ResNetClassifier::forward(Tape& t, const Var& x, bool capture) {
    NetOutput out;
    std::vector<nn::BnObservation>* obs = capture ? &out.bn_obs : nullptr;
    Var y;
    if (capture) {
        out.bn_obs.reserve(static_cast<size_t>(num_bn_layers()));
        obs->emplace_back();
        y = ops::relu(backbone.stem_bn.forward_observe(t, backbone.stem.forward(t, x), &obs->back()));
    } else {
        y = ops::relu(backbone.stem_bn.forward(t, backbone.stem.forward(t, x)));
    }
    for (auto& g : backbone.groups)
        for (auto& b : g) y = block_forward_capture(*b, t, y, obs);
    out.last_map = y;
    out.feature = ops::global_avg_pool(y);
    out.logits = fc.forward(t, out.feature);
    return out;
}

int ResNetClassifier::num_bn_layers() const {
    int n = 1; // stem
    for (auto& g : backbone.groups)
        for (auto& b : g) n += b->has_projection ? 3 : 2;
    return n;
}

// ---- SmallCnn ----

SmallCnn::SmallCnn(const TeacherSpec& spec_, int width_, Rng& rng)
    : fc(4 * width_, spec_.num_classes), spec(spec_), width(width_) {
    int w = width_;
    int chans[5] = {3, w, 2 * w, 4 * w, 4 * w};
    int strides[4] = {1, 2, 2, 1};
    for (int i = 0; i < 4; ++i) {
        convs.push_back(std::make_unique<nn::Conv2d>(chans[i], chans[i + 1], 3, strides[i], 1, false));
        convs.back()->init_kaiming(rng);
        bns.push_back(std::make_unique<nn::BatchNorm2d>(chans[i + 1]));
    }
    fc.init_kaiming(rng);
}

void SmallCnn::collect(nn::Registry& r, const std::string& prefix) {
    for (size_t i = 0; i < convs.size(); ++i) {
        convs[i]->collect(r, nn::join_name(prefix, "conv" + std::to_string(i)));
        bns[i]->collect(r, nn::join_name(prefix, "bn" + std::to_string(i)));
    }
    fc.collect(r, nn::join_name(prefix, "fc"));
}

void SmallCnn::set_training(bool on) {
    for (auto& bn : bns) bn->set_training(on);
}

NetOutput SmallCnn::forward(Tape& t, const Var& x, bool capture) {
    NetOutput out;
    Var y = x;
    for (size_t i = 0; i < convs.size(); ++i) {
        Var pre = convs[i]->forward(t, y);
        if (capture) {
            out.bn_obs.emplace_back();
            y = ops::relu(bns[i]->forward_observe(t, pre, &out.bn_obs.back()));
        } else {
            y = ops::relu(bns[i]->forward(t, pre));
        }
    }
    out.last_map = y;
    out.feature = ops::global_avg_pool(y);
    out.logits = fc.forward(t, out.feature);
    return out;
}

std::string SmallCnn::describe() const {
    return "teacher(arch=smallcnn" + std::to_string(width) + ",classes=" + std::to_string(spec.num_classes) + ")";
}

// ---- factory ----

std::unique_ptr<ClassifierNet> build_classifier(const TeacherSpec& spec, Rng& rng) {
    const std::string& a = spec.arch;
    if (a.rfind("smallcnn", 0) == 0) {
        int w = std::stoi(a.substr(8));
        if (w <= 0) throw std::runtime_error("classifier arch '" + a + "': width must be positive");
        return std::make_unique<SmallCnn>(spec, w, rng);
    }
    return std::make_unique<ResNetClassifier>(spec, backbone_plan(a), rng);
}

// ---- TeacherBundle ----

void TeacherBundle::freeze() {
    for (auto& t : teachers) {
        t->set_training(false);
        t->set_trainable(false);
    }
}

std::vector<NetOutput> TeacherBundle::forward_all(Tape& t, const Var& x, bool capture) {
    std::vector<NetOutput> outs;
    outs.reserve(teachers.size());
    for (size_t n = 0; n < teachers.size(); ++n) {
        if (capture && teachers[n]->num_bn_layers() == 0)
            throw std::runtime_error("teacher " + std::to_string(n) +
                                     " has no batch-norm layers; statistics capture is impossible");
        outs.push_back(teachers[n]->forward(t, x, capture));
    }
    return outs;
}

uint64_t TeacherBundle::state_fingerprint() {
    uint64_t h = 14695981039346656037ull;
    for (auto& t : teachers) {
        uint64_t th = t->state_hash();
        h = fnv1a64(&th, sizeof(th), h);
    }
    return h;
}

} // namespace arch
} // namespace dfkd
