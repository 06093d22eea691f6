#include "attention/attention.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "core/ops.hpp"
#include "nn/optim.hpp"

namespace dfkd {
namespace attention {

using nlohmann::json;

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error("attention: " + msg);
}

// Copies the selected rows of a (M, ...) tensor into a fresh (B, ...) tensor.
Tensor gather_rows(const Tensor& all, const std::vector<int>& indices) {
    require(all.rank() >= 1, "cannot gather rows from a scalar");
    int64_t row = all.numel() / all.size(0);
    std::vector<int> shape = all.shape();
    shape[0] = static_cast<int>(indices.size());
    Tensor out(shape);
    for (size_t i = 0; i < indices.size(); ++i) {
        int idx = indices[i];
        require(idx >= 0 && idx < all.size(0), "row index " + std::to_string(idx) + " out of range");
        std::copy(all.data() + idx * row, all.data() + (idx + 1) * row,
                  out.data() + static_cast<int64_t>(i) * row);
    }
    return out;
}

void check_theta(double theta) {
    require(theta >= 0.0 && theta <= 1.0,
            "mixing coefficient " + std::to_string(theta) + " outside [0,1]");
}

} // namespace

AttentionHead::AttentionHead(int feature_dim, int num_classes)
    : dim(feature_dim), classes(num_classes) {
    require(feature_dim > 0, "query dimension must be positive");
    require(num_classes > 0, "class count must be positive");
    q = Parameter(Tensor({feature_dim}));
}

void AttentionHead::collect(nn::Registry& r, const std::string& prefix) {
    r.add(nn::join_name(prefix, "q"), &q);
}

void AttentionHead::save(const std::string& path, uint64_t student_structure) const {
    json j;
    j["dim"] = dim;
    j["classes"] = classes;
    j["student_structure"] = hash_hex(student_structure);
    std::vector<double> values(q.value.data(), q.value.data() + q.value.numel());
    j["q"] = values;

    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw std::runtime_error("attention: cannot write query file " + path);
        os << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

AttentionHead AttentionHead::load(const std::string& path, uint64_t student_structure) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("attention: cannot read query file " + path);
    json j = json::parse(is);

    std::string stored = j.at("student_structure").get<std::string>();
    std::string current = hash_hex(student_structure);
    if (stored != current)
        throw std::runtime_error("attention: query in " + path + " was trained against student structure " +
                                 stored + " but the student at hand hashes to " + current +
                                 "; refusing to pair them");

    AttentionHead head(j.at("dim").get<int>(), j.at("classes").get<int>());
    std::vector<double> values = j.at("q").get<std::vector<double>>();
    require(static_cast<int64_t>(values.size()) == head.q.value.numel(),
            "query file " + path + " stores " + std::to_string(values.size()) +
                " entries for dimension " + std::to_string(head.dim));
    std::copy(values.begin(), values.end(), head.q.value.data());
    return head;
}

Aggregate aggregate(Tape& t, AttentionHead& head, const arch::StudentOut& student) {
    require(!student.header_features.empty(), "student produced no header features");
    require(student.header_logits.size() == student.header_features.size(),
            std::to_string(student.header_logits.size()) + " header logits but " +
                std::to_string(student.header_features.size()) + " header features");
    const Tensor& f0 = student.header_features[0]->value;
    require(f0.rank() == 2, "header features must be (B,D), got " + f0.shape_str());
    require(f0.size(1) == head.dim,
            "query dimension " + std::to_string(head.dim) + " does not match header feature dimension " +
                std::to_string(f0.size(1)));
    const Tensor& l0 = student.header_logits[0]->value;
    require(l0.size(1) == head.classes,
            "query was built for " + std::to_string(head.classes) + " classes but the student emits " +
                std::to_string(l0.size(1)));

    Var keys = ops::stack_rows(student.header_features); // (B, N, D)
    Var values = ops::stack_rows(student.header_logits); // (B, N, C)
    Var scores = ops::attention_scores(keys, t.leaf(head.q), 1.0 / std::sqrt(static_cast<double>(head.dim)));
    Var weights = ops::softmax_rows(scores);
    return {weights, ops::attention_combine(weights, values)};
}

std::vector<int> pseudo_label(const std::vector<Tensor>& teacher_logits) {
    require(!teacher_logits.empty(), "pseudo labels need at least one teacher");
    const Tensor& first = teacher_logits[0];
    require(first.rank() == 2, "teacher logits must be (B,C), got " + first.shape_str());
    int b = first.size(0);
    int c = first.size(1);
    for (const Tensor& t : teacher_logits)
        require(t.rank() == 2 && t.size(0) == b && t.size(1) == c,
                "teacher logits disagree in shape: " + first.shape_str() + " vs " + t.shape_str());

    std::vector<int> labels(static_cast<size_t>(b), 0);
    for (int i = 0; i < b; ++i) {
        int best = 0;
        double best_mean = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < c; ++k) {
            double sum = 0.0;
            for (const Tensor& t : teacher_logits) sum += t[static_cast<int64_t>(i) * c + k];
            double mean = sum / static_cast<double>(teacher_logits.size());
            if (mean > best_mean) { // strict, so a tie keeps the lowest index
                best_mean = mean;
                best = k;
            }
        }
        labels[static_cast<size_t>(i)] = best;
    }
    return labels;
}

Tensor mixup(const Tensor& x, const Tensor& g, double theta) {
    require(x.shape() == g.shape(),
            "mixup shape mismatch: " + x.shape_str() + " vs " + g.shape_str());
    check_theta(theta);
    Tensor out(x.shape());
    const double* px = x.data();
    const double* pg = g.data();
    double* po = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = theta * px[i] + (1.0 - theta) * pg[i];
    return out;
}

Tensor mixup_rows(const Tensor& x, const Tensor& g, const std::vector<double>& theta) {
    require(x.shape() == g.shape(),
            "mixup shape mismatch: " + x.shape_str() + " vs " + g.shape_str());
    require(x.rank() >= 1 && x.size(0) == static_cast<int>(theta.size()),
            "got " + std::to_string(theta.size()) + " mixing coefficients for batch " + x.shape_str());
    Tensor out(x.shape());
    int64_t row = x.numel() / x.size(0);
    for (int i = 0; i < x.size(0); ++i) {
        double th = theta[static_cast<size_t>(i)];
        check_theta(th);
        const double* px = x.data() + i * row;
        const double* pg = g.data() + i * row;
        double* po = out.data() + i * row;
        for (int64_t k = 0; k < row; ++k) po[k] = th * px[k] + (1.0 - th) * pg[k];
    }
    return out;
}

Var attention_loss(Tape& t, AttentionHead& head, arch::MultiHeadStudent& student,
                   const Tensor& mixed, const std::vector<int>& labels_real,
                   const std::vector<int>& labels_pseudo, const std::vector<double>& theta) {
    require(mixed.rank() == 4 && mixed.size(0) > 0, "mixed batch must be (B,C,H,W), got " + mixed.shape_str());
    size_t b = static_cast<size_t>(mixed.size(0));
    require(labels_real.size() == b && labels_pseudo.size() == b && theta.size() == b,
            "batch of " + std::to_string(b) + " images with " + std::to_string(labels_real.size()) +
                " real labels, " + std::to_string(labels_pseudo.size()) + " pseudo labels and " +
                std::to_string(theta.size()) + " coefficients");
    for (int y : labels_real)
        require(y >= 0 && y < head.classes,
                "label " + std::to_string(y) + " outside the class range 0.." + std::to_string(head.classes - 1));
    for (int y : labels_pseudo)
        require(y >= 0 && y < head.classes,
                "pseudo label " + std::to_string(y) + " outside the class range 0.." + std::to_string(head.classes - 1));

    Tensor weight_real({static_cast<int>(b)});
    Tensor weight_pseudo({static_cast<int>(b)});
    for (size_t i = 0; i < b; ++i) {
        check_theta(theta[i]);
        weight_real[static_cast<int64_t>(i)] = theta[i];
        weight_pseudo[static_cast<int64_t>(i)] = 1.0 - theta[i];
    }

    arch::StudentOut out = student.forward(t, make_constant(mixed));
    Aggregate agg = aggregate(t, head, out);
    Var ce_real = ops::cross_entropy_vec(agg.prediction, labels_real);
    Var ce_pseudo = ops::cross_entropy_vec(agg.prediction, labels_pseudo);
    Var total = ops::add(ops::dot_const(ce_real, weight_real), ops::dot_const(ce_pseudo, weight_pseudo));
    return ops::scale(total, 1.0 / static_cast<double>(b));
}

void AttentionTrainConfig::validate() const {
    if (epochs <= 0) throw std::runtime_error("attention config: epochs must be positive");
    if (batch_size <= 0) throw std::runtime_error("attention config: batch size must be positive");
    if (!(lr >= 0.0) || !std::isfinite(lr))
        throw std::runtime_error("attention config: learning rate must be finite and >= 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
        throw std::runtime_error("attention config: weight decay must be finite and >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::runtime_error("attention config: betas must lie in [0,1)");
}

namespace {

// Plain cross-entropy of the aggregated prediction on real samples, meaned
// over the whole set; evaluated in chunks to bound graph size.
double plain_ce(AttentionHead& head, arch::MultiHeadStudent& student, const Tensor& images,
                const std::vector<int>& labels, int batch_size) {
    int m = images.size(0);
    double total = 0.0;
    std::vector<int> chunk_idx;
    for (int start = 0; start < m; start += batch_size) {
        int bsz = std::min(batch_size, m - start);
        chunk_idx.resize(static_cast<size_t>(bsz));
        for (int i = 0; i < bsz; ++i) chunk_idx[static_cast<size_t>(i)] = start + i;
        Tensor xb = gather_rows(images, chunk_idx);
        std::vector<int> yb(labels.begin() + start, labels.begin() + start + bsz);

        Tape tape;
        arch::StudentOut out = student.forward(tape, make_constant(xb));
        Aggregate agg = aggregate(tape, head, out);
        Var ce = ops::mean_all(ops::cross_entropy_vec(agg.prediction, yb));
        total += ce->scalar_value() * bsz;
    }
    return total / static_cast<double>(m);
}

} // namespace

AttentionTrainResult train_attention(AttentionHead& head, arch::MultiHeadStudent& student,
                                     arch::Generator& generator, arch::TeacherBundle& teachers,
                                     const Tensor& images, const std::vector<int>& labels,
                                     const Tensor& val_images, const std::vector<int>& val_labels,
                                     const AttentionTrainConfig& cfg, Rng& rng) {
    cfg.validate();
    require(images.numel() > 0 && images.rank() == 4,
            "the real subset is empty; without real samples stay data-free and aggregate headers by their average");
    int m = images.size(0);
    require(static_cast<int>(labels.size()) == m,
            std::to_string(m) + " images with " + std::to_string(labels.size()) + " labels");
    bool has_val = val_images.numel() > 0;
    if (has_val) {
        require(val_images.rank() == 4 && static_cast<int>(val_labels.size()) == val_images.size(0),
                "validation images and labels disagree");
    }
    require(head.dim == student.feature_dim(),
            "query dimension " + std::to_string(head.dim) + " does not match header feature dimension " +
                std::to_string(student.feature_dim()));
    require(teachers.count() > 0, "pseudo labels need at least one teacher");

    // Everything but q is read-only: eval mode stops the normalization
    // buffers from drifting and the guards keep the parameters untouched.
    student.set_training(false);
    generator.set_training(false);
    teachers.freeze();
    nn::FreezeGuard hold_student(student);
    nn::FreezeGuard hold_generator(generator);

    nn::Adam opt(head.parameters(), cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay, true);

    AttentionTrainResult result;
    double best = std::numeric_limits<double>::infinity();
    Tensor best_q = head.q.value;

    std::vector<int> order(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) order[static_cast<size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_total = 0.0;
        for (int start = 0; start < m; start += cfg.batch_size) {
            int bsz = std::min(cfg.batch_size, m - start);
            std::vector<int> batch(order.begin() + start, order.begin() + start + bsz);

            // Draw order is part of the contract: noise first, then one
            // mixing coefficient per sample.
            Tensor z({bsz, generator.spec.noise_dim});
            rng.fill_normal(z);
            std::vector<double> theta(static_cast<size_t>(bsz));
            for (double& th : theta) th = rng.uniform();

            Tape tape;
            Var generated = generator.forward(tape, make_constant(z));
            std::vector<Tensor> teacher_logits;
            teacher_logits.reserve(static_cast<size_t>(teachers.count()));
            for (arch::NetOutput& t : teachers.forward_all(tape, generated, false))
                teacher_logits.push_back(t.logits->value);
            std::vector<int> pseudo = pseudo_label(teacher_logits);

            Tensor xb = gather_rows(images, batch);
            std::vector<int> yb(static_cast<size_t>(bsz));
            for (int i = 0; i < bsz; ++i) yb[static_cast<size_t>(i)] = labels[static_cast<size_t>(batch[static_cast<size_t>(i)])];
            Tensor mixed = mixup_rows(xb, generated->value, theta);

            Var loss = attention_loss(tape, head, student, mixed, yb, pseudo, theta);
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
            epoch_total += loss->scalar_value() * bsz;
        }
        double train_mean = epoch_total / static_cast<double>(m);
        result.train_losses.push_back(train_mean);

        double selection = train_mean;
        if (has_val) {
            selection = plain_ce(head, student, val_images, val_labels, cfg.batch_size);
            result.val_losses.push_back(selection);
        }
        if (selection < best) {
            best = selection;
            best_q = head.q.value;
            result.best_epoch = epoch;
            result.best_loss = selection;
        }
    }

    head.q.value = best_q;
    return result;
}

} // namespace attention
} // namespace dfkd
