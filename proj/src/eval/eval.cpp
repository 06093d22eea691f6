#include "eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "core/ops.hpp"
#include "core/rng.hpp"
#include "data/dataset.hpp"

namespace dfkd {
namespace eval {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::runtime_error("eval: " + msg);
}

// One (bsz,C,H,W) slice starting at `start`, copied out of a (M,C,H,W) batch.
Tensor slice_batch(const Tensor& images, int start, int bsz) {
    int c = images.size(1), h = images.size(2), w = images.size(3);
    int64_t sample = static_cast<int64_t>(c) * h * w;
    Tensor out({bsz, c, h, w});
    std::copy(images.data() + start * sample, images.data() + (start + bsz) * sample, out.data());
    return out;
}

void softmax_row(const Tensor& logits, int row, std::vector<double>& probs) {
    int c = logits.size(1);
    const double* p = logits.data() + static_cast<int64_t>(row) * c;
    probs.resize(static_cast<size_t>(c));
    double hi = p[0];
    for (int j = 1; j < c; ++j) hi = std::max(hi, p[j]);
    double total = 0.0;
    for (int j = 0; j < c; ++j) {
        probs[static_cast<size_t>(j)] = std::exp(p[j] - hi);
        total += probs[static_cast<size_t>(j)];
    }
    for (int j = 0; j < c; ++j) probs[static_cast<size_t>(j)] /= total;
}

} // namespace

// ---- accuracy ----

int argmax_row(const Tensor& logits, int row) {
    require(logits.rank() == 2, "argmax_row expects (B,C) logits, got " + logits.shape_str());
    require(row >= 0 && row < logits.size(0),
            "row " + std::to_string(row) + " out of range for " + std::to_string(logits.size(0)) + " rows");
    int c = logits.size(1);
    const double* p = logits.data() + static_cast<int64_t>(row) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
        if (p[j] > p[best]) best = j; // strict, so a tie keeps the lowest index
    return best;
}

double accuracy_percent(const Tensor& logits, const std::vector<int>& labels) {
    require(logits.rank() == 2, "accuracy expects (B,C) logits, got " + logits.shape_str());
    int b = logits.size(0);
    require(b > 0, "no samples to score");
    require(static_cast<size_t>(b) == labels.size(),
            "got " + std::to_string(b) + " logit rows for " + std::to_string(labels.size()) + " labels");
    int hits = 0;
    for (int i = 0; i < b; ++i)
        if (argmax_row(logits, i) == labels[static_cast<size_t>(i)]) ++hits;
    return 100.0 * hits / b;
}

double ensemble_accuracy_percent(const std::vector<Tensor>& member_logits,
                                 const std::vector<int>& labels) {
    require(!member_logits.empty(), "ensemble accuracy needs at least one member");
    Tensor mean = member_logits.front();
    for (size_t m = 1; m < member_logits.size(); ++m) {
        require(member_logits[m].same_shape(mean),
                "ensemble members disagree on logit shape: " + mean.shape_str() + " vs "
                    + member_logits[m].shape_str());
        for (int64_t i = 0; i < mean.numel(); ++i) mean[i] += member_logits[m][i];
    }
    double inv = 1.0 / static_cast<double>(member_logits.size());
    for (int64_t i = 0; i < mean.numel(); ++i) mean[i] *= inv;
    return accuracy_percent(mean, labels);
}

// ---- held-out evaluation ----

EvalReport evaluate(arch::MultiHeadStudent& student, arch::TeacherBundle& teachers,
                    const Tensor& images, const std::vector<int>& labels,
                    attention::AttentionHead* head, int batch_size) {
    require(images.rank() == 4, "evaluate expects (M,C,H,W) images, got " + images.shape_str());
    int m = images.size(0);
    require(m > 0, "the evaluation split is empty");
    require(static_cast<size_t>(m) == labels.size(),
            "got " + std::to_string(m) + " images for " + std::to_string(labels.size()) + " labels");
    require(batch_size > 0, "batch size must be positive");
    int classes = student.spec.num_classes;
    for (size_t i = 0; i < labels.size(); ++i)
        require(labels[i] >= 0 && labels[i] < classes,
                "label " + std::to_string(labels[i]) + " outside the class range 0.."
                    + std::to_string(classes - 1));

    student.set_training(false);
    teachers.freeze();

    int n = student.num_headers();
    int tc = teachers.count();
    std::vector<int64_t> header_hits(static_cast<size_t>(n), 0);
    std::vector<int64_t> teacher_hits(static_cast<size_t>(tc), 0);
    int64_t ens_hits = 0, att_hits = 0, tens_hits = 0;

    for (int start = 0; start < m; start += batch_size) {
        int bsz = std::min(batch_size, m - start);
        Tape t;
        Var x = make_constant(slice_batch(images, start, bsz));
        arch::StudentOut out = student.forward(t, x);
        for (int i = 0; i < bsz; ++i) {
            int truth = labels[static_cast<size_t>(start + i)];
            for (int h = 0; h < n; ++h)
                if (argmax_row(out.header_logits[static_cast<size_t>(h)]->value, i) == truth)
                    ++header_hits[static_cast<size_t>(h)];
            if (argmax_row(out.ensemble_logits->value, i) == truth) ++ens_hits;
        }
        if (head != nullptr) {
            attention::Aggregate agg = attention::aggregate(t, *head, out);
            for (int i = 0; i < bsz; ++i)
                if (argmax_row(agg.prediction->value, i) == labels[static_cast<size_t>(start + i)])
                    ++att_hits;
        }
        if (tc > 0) {
            std::vector<arch::NetOutput> touts = teachers.forward_all(t, x, false);
            std::vector<Tensor> tlogits;
            tlogits.reserve(touts.size());
            for (auto& o : touts) tlogits.push_back(o.logits->value);
            Tensor mean = tlogits.front();
            for (size_t k = 1; k < tlogits.size(); ++k)
                for (int64_t i = 0; i < mean.numel(); ++i) mean[i] += tlogits[k][i];
            for (int64_t i = 0; i < mean.numel(); ++i) mean[i] /= static_cast<double>(tc);
            for (int i = 0; i < bsz; ++i) {
                int truth = labels[static_cast<size_t>(start + i)];
                for (int k = 0; k < tc; ++k)
                    if (argmax_row(tlogits[static_cast<size_t>(k)], i) == truth)
                        ++teacher_hits[static_cast<size_t>(k)];
                if (argmax_row(mean, i) == truth) ++tens_hits;
            }
        }
    }

    EvalReport rep;
    rep.per_header_acc.resize(static_cast<size_t>(n));
    for (int h = 0; h < n; ++h)
        rep.per_header_acc[static_cast<size_t>(h)] = 100.0 * header_hits[static_cast<size_t>(h)] / m;
    rep.ensemble_acc = 100.0 * ens_hits / m;
    rep.has_attention = head != nullptr;
    rep.attention_acc = head != nullptr ? 100.0 * att_hits / m : 0.0;
    rep.teacher_accs.resize(static_cast<size_t>(tc));
    for (int k = 0; k < tc; ++k)
        rep.teacher_accs[static_cast<size_t>(k)] = 100.0 * teacher_hits[static_cast<size_t>(k)] / m;
    rep.teacher_ensemble_acc = tc > 0 ? 100.0 * tens_hits / m : 0.0;
    return rep;
}

std::string EvalReport::json() const {
    nlohmann::json j;
    j["per_header_acc"] = per_header_acc;
    j["ensemble_acc"] = ensemble_acc;
    if (has_attention) j["attention_acc"] = attention_acc;
    j["teacher_accs"] = teacher_accs;
    j["teacher_ensemble_acc"] = teacher_ensemble_acc;
    return j.dump(2);
}

// ---- static model cost ----

namespace {

// Walks a layer sequence keeping the running spatial size; every conv or
// linear contributes its exact parameter count and per-forward MACs.
struct CostWalk {
    ModelCost cost;
    int h = 0, w = 0;

    void add(const std::string& name, int64_t params, int64_t macs) {
        cost.layers.push_back({name, params, macs});
        cost.params += params;
        cost.macs += macs;
    }

    void conv(const std::string& name, int in_c, int out_c, int k, int stride, int pad,
              int groups, bool bias) {
        int oh = (h + 2 * pad - k) / stride + 1;
        int ow = (w + 2 * pad - k) / stride + 1;
        require(oh > 0 && ow > 0, name + " collapses a " + std::to_string(h) + "x"
                                      + std::to_string(w) + " input to nothing");
        int64_t weight = static_cast<int64_t>(out_c) * (in_c / groups) * k * k;
        add(name, weight + (bias ? out_c : 0), weight * oh * ow);
        h = oh;
        w = ow;
    }

    // Scale and shift only; the running statistics are buffers, not parameters.
    void bn(const std::string& name, int c) { add(name, 2ll * c, 0); }

    void linear(const std::string& name, int in, int out) {
        add(name, static_cast<int64_t>(in) * out + out, static_cast<int64_t>(in) * out);
    }
};

// Returns the spatial size after every group (the tap sizes).
std::vector<std::pair<int, int>> walk_backbone(CostWalk& cw, const arch::BackbonePlan& plan) {
    cw.conv("stem", 3, plan.stem_channels, 3, 1, 1, 1, false);
    cw.bn("stem_bn", plan.stem_channels);
    std::vector<std::pair<int, int>> taps;
    int in_c = plan.stem_channels;
    for (int g = 0; g < plan.groups(); ++g) {
        for (int b = 0; b < plan.blocks[static_cast<size_t>(g)]; ++b) {
            int stride = b == 0 ? plan.strides[static_cast<size_t>(g)] : 1;
            int out_c = plan.channels[static_cast<size_t>(g)];
            std::string nm = "group" + std::to_string(g) + ".block" + std::to_string(b);
            cw.conv(nm + ".conv1", in_c, out_c, 3, stride, 1, 1, false);
            cw.bn(nm + ".bn1", out_c);
            cw.conv(nm + ".conv2", out_c, out_c, 3, 1, 1, 1, false);
            cw.bn(nm + ".bn2", out_c);
            if (stride != 1 || in_c != out_c) {
                // 1x1 shortcut, landing on the grid conv1 just produced
                int64_t weight = static_cast<int64_t>(in_c) * out_c;
                cw.add(nm + ".proj", weight, weight * cw.h * cw.w);
                cw.bn(nm + ".proj_bn", out_c);
            }
            in_c = out_c;
        }
        taps.emplace_back(cw.h, cw.w);
    }
    return taps;
}

} // namespace

ModelCost classifier_cost(const arch::TeacherSpec& spec, int in_h, int in_w) {
    require(in_h > 0 && in_w > 0, "cost needs a positive input size");
    require(spec.num_classes > 0, "cost needs a positive class count");
    CostWalk cw;
    cw.h = in_h;
    cw.w = in_w;
    if (spec.arch.rfind("smallcnn", 0) == 0) {
        int width = std::stoi(spec.arch.substr(8));
        require(width > 0, "classifier arch '" + spec.arch + "': width must be positive");
        int chans[5] = {3, width, 2 * width, 4 * width, 4 * width};
        int strides[4] = {1, 2, 2, 1};
        for (int i = 0; i < 4; ++i) {
            cw.conv("conv" + std::to_string(i), chans[i], chans[i + 1], 3, strides[i], 1, 1, false);
            cw.bn("bn" + std::to_string(i), chans[i + 1]);
        }
        cw.linear("fc", 4 * width, spec.num_classes);
    } else {
        arch::BackbonePlan plan = arch::backbone_plan(spec.arch);
        walk_backbone(cw, plan);
        cw.linear("fc", plan.final_channels(), spec.num_classes);
    }
    return cw.cost;
}

ModelCost student_cost(const arch::StudentSpec& spec, int in_h, int in_w) {
    require(in_h > 0 && in_w > 0, "cost needs a positive input size");
    spec.validate();
    CostWalk cw;
    cw.h = in_h;
    cw.w = in_w;
    arch::BackbonePlan plan = arch::backbone_plan(spec.backbone);
    std::vector<std::pair<int, int>> taps = walk_backbone(cw, plan);
    arch::HeaderChannelPlan hp = arch::header_channel_plan(plan);
    int blocks = static_cast<int>(hp.out_channels.size());
    for (int n = 0; n < spec.num_headers; ++n) {
        std::string hn = "header" + std::to_string(n);
        for (int j = 0; j < blocks; ++j) {
            // Block 0 reads the first tap; block j the concatenation at tap j-1.
            auto [ih, iw] = taps[static_cast<size_t>(j == 0 ? 0 : j - 1)];
            cw.h = ih;
            cw.w = iw;
            int in_c = hp.in_channels[static_cast<size_t>(j)];
            int out_c = hp.out_channels[static_cast<size_t>(j)];
            int stride = hp.strides[static_cast<size_t>(j)];
            std::string bn = hn + ".block" + std::to_string(j);
            cw.conv(bn + ".dw1", in_c, in_c, 3, stride, 1, in_c, false);
            cw.conv(bn + ".pw1", in_c, in_c, 1, 1, 0, 1, false);
            cw.bn(bn + ".bn1", in_c);
            cw.conv(bn + ".dw2", in_c, in_c, 3, 1, 1, in_c, false);
            cw.conv(bn + ".pw2", in_c, out_c, 1, 1, 0, 1, false);
            cw.bn(bn + ".bn2", out_c);
        }
        int feat = hp.out_channels.back();
        if (spec.feature_projection_dim > 0) {
            cw.linear(hn + ".projection", feat, spec.feature_projection_dim);
            feat = spec.feature_projection_dim;
        }
        cw.linear(hn + ".classifier", feat, spec.num_classes);
    }
    return cw.cost;
}

std::string ModelCost::json() const {
    nlohmann::json j;
    j["convention"] = convention;
    j["params"] = params;
    j["macs"] = macs;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers)
        j["layers"].push_back({{"name", l.name}, {"params", l.params}, {"macs", l.macs}});
    return j.dump(2);
}

// ---- confusion ----

void ConfusionRecord::merge(const ConfusionRecord& other) {
    require(classes == other.classes, "cannot merge confusion records over "
                                          + std::to_string(classes) + " and "
                                          + std::to_string(other.classes) + " classes");
    require(!normalized && !other.normalized, "cannot merge normalized confusion records");
    for (size_t i = 0; i < matrix.size(); ++i) matrix[i] += other.matrix[i];
}

void ConfusionRecord::row_normalize() {
    for (int r = 0; r < classes; ++r) {
        double total = 0.0;
        for (int c = 0; c < classes; ++c) total += at(r, c);
        if (total > 0.0)
            for (int c = 0; c < classes; ++c) at(r, c) /= total;
    }
    normalized = true;
}

double ConfusionRecord::off_diagonal_fraction() const {
    double total = 0.0, off = 0.0;
    for (int r = 0; r < classes; ++r)
        for (int c = 0; c < classes; ++c) {
            total += at(r, c);
            if (r != c) off += at(r, c);
        }
    require(total > 0.0, "confusion record holds no mass");
    return off / total;
}

void ConfusionRecord::write_csv(const std::string& path) const {
    require(classes > 0, "confusion record is empty");
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        require(os.good(), "cannot write " + tmp);
        os << "label";
        for (int c = 0; c < classes; ++c) os << ',' << c;
        os << '\n';
        char buf[64];
        for (int r = 0; r < classes; ++r) {
            os << r;
            for (int c = 0; c < classes; ++c) {
                std::snprintf(buf, sizeof(buf), "%.12g", at(r, c));
                os << ',' << buf;
            }
            os << '\n';
        }
        os.flush();
        require(os.good(), "write to " + tmp + " failed");
    }
    require(std::rename(tmp.c_str(), path.c_str()) == 0, "cannot move " + tmp + " into place");
}

ConfusionRecord confusion_matrix(arch::ClassifierNet& model, const Tensor& samples,
                                 const std::vector<int>& labels, RowLabel labeling,
                                 int batch_size) {
    require(samples.rank() == 4, "confusion expects (M,C,H,W) samples, got " + samples.shape_str());
    int m = samples.size(0);
    require(m > 0, "no samples to accumulate");
    require(batch_size > 0, "batch size must be positive");
    if (labeling == RowLabel::GroundTruth)
        require(static_cast<size_t>(m) == labels.size(),
                "got " + std::to_string(m) + " samples for " + std::to_string(labels.size())
                    + " labels");

    model.set_training(false);
    ConfusionRecord rec;
    std::vector<double> probs;
    for (int start = 0; start < m; start += batch_size) {
        int bsz = std::min(batch_size, m - start);
        Tape t;
        arch::NetOutput out = model.forward(t, make_constant(slice_batch(samples, start, bsz)), false);
        const Tensor& lg = out.logits->value;
        int c = lg.size(1);
        if (rec.classes == 0) {
            rec.classes = c;
            rec.matrix.assign(static_cast<size_t>(c) * c, 0.0);
        }
        for (int i = 0; i < bsz; ++i) {
            int row;
            if (labeling == RowLabel::GroundTruth) {
                row = labels[static_cast<size_t>(start + i)];
                require(row >= 0 && row < c, "label " + std::to_string(row)
                                                 + " outside the class range 0.." + std::to_string(c - 1));
            } else {
                row = argmax_row(lg, i);
            }
            softmax_row(lg, i, probs);
            for (int j = 0; j < c; ++j) rec.at(row, j) += probs[static_cast<size_t>(j)];
        }
    }
    return rec;
}

// ---- class activation maps ----

namespace {

// Backward from one logit, weight the map channels by their pooled gradients,
// clamp at zero, resize, and stretch to [0,1]. A flat result carries no
// locality signal, so it comes back all zero rather than an arbitrary level.
Tensor cam_from_map(Tape& t, const Var& map, const Var& logits, int target_class,
                    int out_h, int out_w) {
    int c = logits->value.size(1);
    require(target_class >= 0 && target_class < c,
            "class " + std::to_string(target_class) + " outside the class range 0.."
                + std::to_string(c - 1));
    t.backward(ops::select_item(logits, target_class));
    require(map->has_grad(), "no gradient reached the activation map");

    const Tensor& a = map->value;
    const Tensor& g = map->grad;
    int k = a.size(1), mh = a.size(2), mw = a.size(3);
    Tensor cam({1, mh, mw}, 0.0);
    double inv = 1.0 / (static_cast<double>(mh) * mw);
    for (int ch = 0; ch < k; ++ch) {
        double alpha = 0.0;
        for (int y = 0; y < mh; ++y)
            for (int x = 0; x < mw; ++x) alpha += g.at(0, ch, y, x);
        alpha *= inv;
        for (int y = 0; y < mh; ++y)
            for (int x = 0; x < mw; ++x) cam.at(0, y, x) += alpha * a.at(0, ch, y, x);
    }
    for (int64_t i = 0; i < cam.numel(); ++i) cam[i] = cam[i] > 0.0 ? cam[i] : 0.0;

    Tensor up = data::resize_bilinear(cam, out_h, out_w);
    double lo = up[0], hi = up[0];
    for (int64_t i = 1; i < up.numel(); ++i) {
        lo = std::min(lo, up[i]);
        hi = std::max(hi, up[i]);
    }
    Tensor out({out_h, out_w}, 0.0);
    if (hi > lo)
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = (up[i] - lo) / (hi - lo);
    return out;
}

Tensor batch_of_one(const Tensor& chw) {
    Tensor x({1, chw.size(0), chw.size(1), chw.size(2)});
    std::copy(chw.data(), chw.data() + chw.numel(), x.data());
    return x;
}

} // namespace

Tensor gradcam_map(arch::ClassifierNet& model, const Tensor& chw, int target_class) {
    require(chw.rank() == 3, "activation map expects one (C,H,W) sample, got " + chw.shape_str());
    model.set_training(false);
    Tape t;
    // A differentiable input keeps the activation path alive under frozen weights.
    Var x = make_input(batch_of_one(chw), true);
    arch::NetOutput out = model.forward(t, x, false);
    return cam_from_map(t, out.last_map, out.logits, target_class, chw.size(1), chw.size(2));
}

Tensor gradcam_map_header(arch::MultiHeadStudent& student, const Tensor& chw, int header,
                          int target_class) {
    require(chw.rank() == 3, "activation map expects one (C,H,W) sample, got " + chw.shape_str());
    require(header >= 0 && header < student.num_headers(),
            "header " + std::to_string(header) + " out of range for "
                + std::to_string(student.num_headers()) + " headers");
    student.set_training(false);
    Tape t;
    Var x = make_input(batch_of_one(chw), true);
    arch::StudentOut out = student.forward(t, x);
    return cam_from_map(t, out.header_maps[static_cast<size_t>(header)],
                        out.header_logits[static_cast<size_t>(header)], target_class,
                        chw.size(1), chw.size(2));
}

// ---- sample grid ----

void export_sample_grid(arch::Generator& generator, int rows, int cols, uint64_t seed,
                        const std::string& path) {
    require(rows > 0 && cols > 0, "grid needs positive rows and cols");
    generator.set_training(false);
    int b = rows * cols;
    Tensor z({b, generator.spec.noise_dim});
    Rng rng(seed);
    rng.fill_normal(z);
    Tape t;
    Var img = generator.forward(t, make_constant(z));
    const Tensor& g = img->value;
    int c = g.size(1), h = g.size(2), w = g.size(3);
    Tensor tile({c, rows * h, cols * w});
    for (int r = 0; r < rows; ++r)
        for (int s = 0; s < cols; ++s) {
            int i = r * cols + s;
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        tile.at(ch, r * h + y, s * w + x) = g.at(i, ch, y, x);
        }
    data::write_raster(path, data::raster_from_chw(tile));
}

} // namespace eval
} // namespace dfkd
