#pragma once

#include <vector>

#include "arch/student.hpp"
#include "core/graph.hpp"
#include "nn/layers.hpp"

namespace dfkd {
namespace losses {

// Balancing weights for the composite objectives.
struct LossWeights {
    double alpha = 0.0;  // ensemble term
    double beta = 0.0;   // feature term
    double gamma = 0.0;  // batch-norm statistics term
    double lambda = 0.0; // labeled cross-entropy term in the supervised baseline

    void validate() const; // throws unless every weight is finite and >= 0
};

// Scalar snapshot of every objective part for one evaluation batch.
struct LossReport {
    double bn = 0.0;
    double head = 0.0;
    double ens = 0.0;
    double feat = 0.0;
    double student_total = 0.0;
    double generator_total = 0.0;
};

LossReport make_report(double bn, double head, double ens, double feat, const LossWeights& w);

// Mean over frozen models, then over their normalization layers, of
// || mean_batch - mean_stored ||_2 + || sigma_batch - sigma_stored ||_2.
// One inner vector per model, one observation per captured layer.
Var bn_loss(const std::vector<std::vector<nn::BnObservation>>& records);

// Mean over header/teacher pairs of the batch-mean l1 distance between
// logits, pairing header n with teacher n.
Var header_loss(const arch::StudentOut& student, const std::vector<Var>& teacher_logits);

// Batch-mean l1 distance between the student ensemble prediction and the
// mean of the teacher predictions.
Var ensemble_loss(const arch::StudentOut& student, const std::vector<Var>& teacher_logits);

// Mean over header/teacher pairs of the batch-mean l1 distance between
// pooled features. Dimensions must already agree (see student projection).
Var feature_loss(const arch::StudentOut& student, const std::vector<Var>& teacher_features);

// head + alpha * ens + beta * feat
Var student_objective(const Var& head, const Var& ens, const Var& feat, const LossWeights& w);

// -head + gamma * bn
Var generator_objective(const Var& head, const Var& bn, const LossWeights& w);

// Soft-target matching for the data-required baseline:
//   tau^2 * KL(softmax(s/tau) || softmax(t/tau)) + lambda * CE(s, labels),
// batch-meaned. The cross-entropy term is dropped entirely when lambda is 0.
Var kd_baseline_loss(const Var& student_logits, const Var& teacher_logits,
                     const std::vector<int>& labels, const LossWeights& w,
                     double temperature = 1.0);

} // namespace losses
} // namespace dfkd
