#include "losses/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "core/ops.hpp"

namespace dfkd {
namespace losses {

namespace {

// Sum of absolute differences over the trailing dimension, averaged over rows.
Var row_l1_mean(const Var& a, const Var& b) {
    return ops::mean_all(ops::sum_rows(ops::abs_val(ops::sub(a, b))));
}

void check_pair_count(const char* what, size_t student_n, size_t teacher_n) {
    if (student_n == 0 || teacher_n == 0)
        throw std::runtime_error(std::string(what) + ": needs at least one header/teacher pair");
    if (student_n != teacher_n)
        throw std::runtime_error(std::string(what) + ": " + std::to_string(student_n) +
                                 " student headers vs " + std::to_string(teacher_n) + " teachers");
}

} // namespace

void LossWeights::validate() const {
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v) || v < 0.0)
            throw std::runtime_error(std::string("loss weights: ") + name +
                                     " must be finite and non-negative, got " + std::to_string(v));
    };
    check(alpha, "alpha");
    check(beta, "beta");
    check(gamma, "gamma");
    check(lambda, "lambda");
}

LossReport make_report(double bn, double head, double ens, double feat, const LossWeights& w) {
    LossReport r;
    r.bn = bn;
    r.head = head;
    r.ens = ens;
    r.feat = feat;
    r.student_total = head + w.alpha * ens + w.beta * feat;
    r.generator_total = -head + w.gamma * bn;
    return r;
}

Var bn_loss(const std::vector<std::vector<nn::BnObservation>>& records) {
    if (records.empty()) throw std::runtime_error("bn loss: no models captured");
    std::vector<Var> per_model;
    per_model.reserve(records.size());
    for (size_t n = 0; n < records.size(); ++n) {
        const auto& layers = records[n];
        if (layers.empty())
            throw std::runtime_error("bn loss: model " + std::to_string(n) + " captured no layers");
        std::vector<Var> per_layer;
        per_layer.reserve(layers.size());
        for (size_t i = 0; i < layers.size(); ++i) {
            const auto& obs = layers[i];
            if (obs.mean_batch->value.numel() != obs.mean_stored.numel() ||
                obs.sigma_batch->value.numel() != obs.sigma_stored.numel())
                throw std::runtime_error("bn loss: model " + std::to_string(n) + " layer " +
                                         std::to_string(i) + " observed " +
                                         std::to_string(obs.mean_batch->value.numel()) +
                                         " channels but stores " +
                                         std::to_string(obs.mean_stored.numel()));
            Var dm = ops::l2_norm(ops::sub(obs.mean_batch, make_constant(obs.mean_stored)));
            Var ds = ops::l2_norm(ops::sub(obs.sigma_batch, make_constant(obs.sigma_stored)));
            per_layer.push_back(ops::add(dm, ds));
        }
        per_model.push_back(ops::average_list(per_layer));
    }
    return ops::average_list(per_model);
}

Var header_loss(const arch::StudentOut& student, const std::vector<Var>& teacher_logits) {
    check_pair_count("header loss", student.header_logits.size(), teacher_logits.size());
    std::vector<Var> per_pair;
    per_pair.reserve(teacher_logits.size());
    for (size_t n = 0; n < teacher_logits.size(); ++n)
        per_pair.push_back(row_l1_mean(student.header_logits[n], teacher_logits[n]));
    return ops::average_list(per_pair);
}

Var ensemble_loss(const arch::StudentOut& student, const std::vector<Var>& teacher_logits) {
    check_pair_count("ensemble loss", student.header_logits.size(), teacher_logits.size());
    return row_l1_mean(student.ensemble_logits, ops::average_list(teacher_logits));
}

Var feature_loss(const arch::StudentOut& student, const std::vector<Var>& teacher_features) {
    check_pair_count("feature loss", student.header_features.size(), teacher_features.size());
    std::vector<Var> per_pair;
    per_pair.reserve(teacher_features.size());
    for (size_t n = 0; n < teacher_features.size(); ++n) {
        int sd = student.header_features[n]->value.shape().back();
        int td = teacher_features[n]->value.shape().back();
        if (sd != td)
            throw std::runtime_error("feature loss: pair " + std::to_string(n) + " student dim " +
                                     std::to_string(sd) + " vs teacher dim " + std::to_string(td) +
                                     " (enable the student feature projection to bridge)");
        per_pair.push_back(row_l1_mean(student.header_features[n], teacher_features[n]));
    }
    return ops::average_list(per_pair);
}

Var student_objective(const Var& head, const Var& ens, const Var& feat, const LossWeights& w) {
    w.validate();
    return ops::add(head, ops::add(ops::scale(ens, w.alpha), ops::scale(feat, w.beta)));
}

Var generator_objective(const Var& head, const Var& bn, const LossWeights& w) {
    w.validate();
    return ops::add(ops::scale(head, -1.0), ops::scale(bn, w.gamma));
}

Var kd_baseline_loss(const Var& student_logits, const Var& teacher_logits,
                     const std::vector<int>& labels, const LossWeights& w, double temperature) {
    w.validate();
    if (temperature <= 0.0)
        throw std::runtime_error("kd baseline: temperature must be positive, got " +
                                 std::to_string(temperature));
    int classes = student_logits->value.shape().back();
    for (int y : labels)
        if (y < 0 || y >= classes)
            throw std::runtime_error("kd baseline: label " + std::to_string(y) +
                                     " outside the class range 0.." + std::to_string(classes - 1));

    Var log_s = ops::log_softmax_rows(ops::scale(student_logits, 1.0 / temperature));
    Var log_t = ops::log_softmax_rows(ops::scale(teacher_logits, 1.0 / temperature));
    Var prob_s = ops::exp_val(log_s);
    Var kl = ops::mean_all(ops::sum_rows(ops::mul(prob_s, ops::sub(log_s, log_t))));
    Var out = ops::scale(kl, temperature * temperature);
    if (w.lambda != 0.0) {
        Var ce = ops::mean_all(ops::cross_entropy_vec(student_logits, labels));
        out = ops::add(out, ops::scale(ce, w.lambda));
    }
    return out;
}

} // namespace losses
} // namespace dfkd
