#include "arch/student.hpp"

#include <stdexcept>

namespace dfkd {
namespace arch {

// ---- BasicBlock ----

BasicBlock::BasicBlock(int in_c, int out_c, int stride, Rng& rng)
    : conv1(in_c, out_c, 3, stride, 1, false),
      conv2(out_c, out_c, 3, 1, 1, false),
      bn1(out_c), bn2(out_c) {
    conv1.init_kaiming(rng);
    conv2.init_kaiming(rng);
    if (stride != 1 || in_c != out_c) {
        has_projection = true;
        proj_conv = nn::Conv2d(in_c, out_c, 1, stride, 0, false);
        proj_bn = nn::BatchNorm2d(out_c);
        proj_conv.init_kaiming(rng);
    }
}

void BasicBlock::collect(nn::Registry& r, const std::string& prefix) {
    conv1.collect(r, nn::join_name(prefix, "conv1"));
    bn1.collect(r, nn::join_name(prefix, "bn1"));
    conv2.collect(r, nn::join_name(prefix, "conv2"));
    bn2.collect(r, nn::join_name(prefix, "bn2"));
    if (has_projection) {
        proj_conv.collect(r, nn::join_name(prefix, "proj_conv"));
        proj_bn.collect(r, nn::join_name(prefix, "proj_bn"));
    }
}

void BasicBlock::set_training(bool on) {
    bn1.set_training(on);
    bn2.set_training(on);
    if (has_projection) proj_bn.set_training(on);
}

Var BasicBlock::forward(Tape& t, const Var& x) {
    Var y = ops::relu(bn1.forward(t, conv1.forward(t, x)));
    y = bn2.forward(t, conv2.forward(t, y));
    Var shortcut = has_projection ? proj_bn.forward(t, proj_conv.forward(t, x)) : x;
    return ops::relu(ops::add(y, shortcut));
}

// ---- Backbone ----

Backbone::Backbone(const BackbonePlan& plan_, Rng& rng)
    : plan(plan_),
      stem(3, plan_.stem_channels, 3, 1, 1, false),
      stem_bn(plan_.stem_channels) {
    stem.init_kaiming(rng);
    int in_c = plan.stem_channels;
    for (int g = 0; g < plan.groups(); ++g) {
        std::vector<std::unique_ptr<BasicBlock>> group;
        for (int b = 0; b < plan.blocks[static_cast<size_t>(g)]; ++b) {
            int stride = (b == 0) ? plan.strides[static_cast<size_t>(g)] : 1;
            group.push_back(std::make_unique<BasicBlock>(in_c, plan.channels[static_cast<size_t>(g)], stride, rng));
            in_c = plan.channels[static_cast<size_t>(g)];
        }
        groups.push_back(std::move(group));
    }
}

void Backbone::collect(nn::Registry& r, const std::string& prefix) {
    stem.collect(r, nn::join_name(prefix, "stem"));
    stem_bn.collect(r, nn::join_name(prefix, "stem_bn"));
    for (size_t g = 0; g < groups.size(); ++g)
        for (size_t b = 0; b < groups[g].size(); ++b)
            groups[g][b]->collect(r, nn::join_name(prefix, "g" + std::to_string(g) + ".b" + std::to_string(b)));
}

void Backbone::set_training(bool on) {
    stem_bn.set_training(on);
    for (auto& g : groups)
        for (auto& b : g) b->set_training(on);
}

std::vector<Var> Backbone::forward_taps(Tape& t, const Var& x) {
    Var y = ops::relu(stem_bn.forward(t, stem.forward(t, x)));
    std::vector<Var> taps;
    taps.reserve(groups.size());
    for (auto& g : groups) {
        for (auto& b : g) y = b->forward(t, y);
        taps.push_back(y);
    }
    return taps;
}

// ---- HeaderBlock ----

HeaderBlock::HeaderBlock(int in_c, int out_c, int stride, Rng& rng)
    : dw1(in_c, in_c, 3, stride, 1, false, in_c),
      pw1(in_c, in_c, 1, 1, 0, false),
      dw2(in_c, in_c, 3, 1, 1, false, in_c),
      pw2(in_c, out_c, 1, 1, 0, false),
      bn1(in_c), bn2(out_c) {
    dw1.init_kaiming(rng);
    pw1.init_kaiming(rng);
    dw2.init_kaiming(rng);
    pw2.init_kaiming(rng);
}

void HeaderBlock::collect(nn::Registry& r, const std::string& prefix) {
    dw1.collect(r, nn::join_name(prefix, "dw1"));
    pw1.collect(r, nn::join_name(prefix, "pw1"));
    bn1.collect(r, nn::join_name(prefix, "bn1"));
    dw2.collect(r, nn::join_name(prefix, "dw2"));
    pw2.collect(r, nn::join_name(prefix, "pw2"));
    bn2.collect(r, nn::join_name(prefix, "bn2"));
}

void HeaderBlock::set_training(bool on) {
    bn1.set_training(on);
    bn2.set_training(on);
}

Var HeaderBlock::forward(Tape& t, const Var& x) {
    Var y = ops::relu(bn1.forward(t, pw1.forward(t, dw1.forward(t, x))));
    return ops::relu(bn2.forward(t, pw2.forward(t, dw2.forward(t, y))));
}

// ---- MultiHeadStudent ----

void validate_header_plan(const BackbonePlan& plan, const HeaderChannelPlan& header) {
    int m = plan.groups();
    if (static_cast<int>(header.in_channels.size()) != m ||
        static_cast<int>(header.out_channels.size()) != m)
        throw std::runtime_error("header plan: expected " + std::to_string(m) + " blocks");
    for (int j = 0; j < m; ++j) {
        int want_in = (j == 0) ? plan.channels[0] : 2 * plan.channels[static_cast<size_t>(j - 1)];
        int want_out = plan.channels[static_cast<size_t>(j)];
        if (header.in_channels[static_cast<size_t>(j)] != want_in)
            throw std::runtime_error("header plan: block " + std::to_string(j) + " input channels " +
                                     std::to_string(header.in_channels[static_cast<size_t>(j)]) +
                                     " violate the concatenation rule (expected " + std::to_string(want_in) + ")");
        if (header.out_channels[static_cast<size_t>(j)] != want_out)
            throw std::runtime_error("header plan: block " + std::to_string(j) + " output channels " +
                                     std::to_string(header.out_channels[static_cast<size_t>(j)]) +
                                     " must match backbone group output (expected " + std::to_string(want_out) + ")");
        if (header.strides[static_cast<size_t>(j)] != plan.strides[static_cast<size_t>(j)])
            throw std::runtime_error("header plan: block " + std::to_string(j) +
                                     " stride must mirror the backbone group stride");
    }
}

MultiHeadStudent::Header::Header(const HeaderChannelPlan& plan, int classes, int proj_dim, Rng& rng)
    : classifier(plan.out_channels.back(), classes) {
    size_t m = plan.in_channels.size();
    for (size_t j = 0; j < m; ++j)
        blocks.push_back(std::make_unique<HeaderBlock>(plan.in_channels[j], plan.out_channels[j],
                                                       plan.strides[j], rng));
    if (proj_dim > 0) {
        projection = std::make_unique<nn::Linear>(plan.out_channels.back(), proj_dim);
        projection->init_kaiming(rng);
        classifier = nn::Linear(proj_dim, classes);
    }
    classifier.init_kaiming(rng);
}

MultiHeadStudent::MultiHeadStudent(const StudentSpec& spec_, Rng& rng)
    : spec(spec_), plan(backbone_plan(spec_.backbone)), backbone(plan, rng) {
    spec.validate();
    HeaderChannelPlan hplan = header_channel_plan(plan);
    validate_header_plan(plan, hplan);
    for (int n = 0; n < spec.num_headers; ++n)
        headers.push_back(std::make_unique<Header>(hplan, spec.num_classes, spec.feature_projection_dim, rng));
}

void MultiHeadStudent::collect(nn::Registry& r, const std::string& prefix) {
    backbone.collect(r, nn::join_name(prefix, "backbone"));
    for (size_t n = 0; n < headers.size(); ++n) {
        std::string hp = nn::join_name(prefix, "header" + std::to_string(n));
        for (size_t j = 0; j < headers[n]->blocks.size(); ++j)
            headers[n]->blocks[j]->collect(r, nn::join_name(hp, "block" + std::to_string(j)));
        if (headers[n]->projection) headers[n]->projection->collect(r, nn::join_name(hp, "proj"));
        headers[n]->classifier.collect(r, nn::join_name(hp, "fc"));
    }
}

void MultiHeadStudent::set_training(bool on) {
    backbone.set_training(on);
    for (auto& h : headers)
        for (auto& b : h->blocks) b->set_training(on);
}

StudentOut MultiHeadStudent::forward(Tape& t, const Var& x) {
    std::vector<Var> taps = backbone.forward_taps(t, x);
    StudentOut out;
    for (auto& h : headers) {
        Var y = h->blocks[0]->forward(t, taps[0]);
        for (size_t j = 1; j < h->blocks.size(); ++j)
            y = h->blocks[j]->forward(t, ops::concat_channels(taps[j - 1], y));
        out.header_maps.push_back(y);
        Var feat = ops::global_avg_pool(y);
        if (h->projection) feat = h->projection->forward(t, feat);
        out.header_features.push_back(feat);
        out.header_logits.push_back(h->classifier.forward(t, feat));
    }
    out.ensemble_logits = ops::average_list(out.header_logits);
    return out;
}

int MultiHeadStudent::feature_dim() const {
    return spec.feature_projection_dim > 0 ? spec.feature_projection_dim : plan.final_channels();
}

std::string MultiHeadStudent::describe() const { return spec.describe(); }

} // namespace arch
} // namespace dfkd
