#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arch/generator.hpp"
#include "arch/student.hpp"
#include "arch/teacher.hpp"
#include "core/rng.hpp"
#include "nn/layers.hpp"

namespace dfkd {
namespace attention {

// Learnable query over the student's header features. Zero initialization
// makes the starting aggregation the exact header average.
struct AttentionHead : nn::Module {
    Parameter q;
    int dim = 0;     // header feature dimension, must match the student
    int classes = 0;

    AttentionHead(int feature_dim, int num_classes);
    void collect(nn::Registry& r, const std::string& prefix) override;

    // JSON file holding q together with the structure hash of the student it
    // was trained against; load refuses a file whose hash disagrees.
    void save(const std::string& path, uint64_t student_structure) const;
    static AttentionHead load(const std::string& path, uint64_t student_structure);
};

struct Aggregate {
    Var weights;    // (B, N), each row on the probability simplex
    Var prediction; // (B, C)
};

// Per sample: w = softmax(header_features . q / sqrt(D)),
// prediction = sum_n w_n * header_logits_n.
Aggregate aggregate(Tape& t, AttentionHead& head, const arch::StudentOut& student);

// Per-sample argmax of the mean of the teacher logits; an exact tie resolves
// to the lowest class index.
std::vector<int> pseudo_label(const std::vector<Tensor>& teacher_logits);

// Elementwise convex combination theta * x + (1 - theta) * g.
Tensor mixup(const Tensor& x, const Tensor& g, double theta);
// Same with one coefficient per sample: row b mixes with theta[b].
Tensor mixup_rows(const Tensor& x, const Tensor& g, const std::vector<double>& theta);

// Mean over the batch of
//   theta_b * CE(prediction_b, real label) + (1 - theta_b) * CE(prediction_b, pseudo label)
// evaluated on the mixed images. Only q receives a gradient; the student is
// read through but held fixed by the caller.
Var attention_loss(Tape& t, AttentionHead& head, arch::MultiHeadStudent& student,
                   const Tensor& mixed, const std::vector<int>& labels_real,
                   const std::vector<int>& labels_pseudo, const std::vector<double>& theta);

struct AttentionTrainConfig {
    int epochs = 30;
    int batch_size = 128;
    double lr = 0.01;
    double weight_decay = 1e-4; // applied decoupled from the gradient
    double beta1 = 0.9;
    double beta2 = 0.999;

    void validate() const;
};

struct AttentionTrainResult {
    std::vector<double> train_losses; // per-epoch mean of the mixed loss
    std::vector<double> val_losses;   // per-epoch plain CE on the validation samples
    int best_epoch = 0;               // epoch whose q was kept
    double best_loss = 0.0;           // its selection loss
};

// Epochs over a shuffled real subset. Every batch first draws noise z, then
// one theta per sample, mixes the real images with the generated ones, and
// descends the mixed loss with respect to q alone; student, generator and
// teachers run in eval mode and never change. Keeps the q of the epoch with
// the lowest validation loss, or the lowest train loss when val_images is
// empty. Pass an empty tensor for val_images to skip validation.
AttentionTrainResult train_attention(AttentionHead& head, arch::MultiHeadStudent& student,
                                     arch::Generator& generator, arch::TeacherBundle& teachers,
                                     const Tensor& images, const std::vector<int>& labels,
                                     const Tensor& val_images, const std::vector<int>& val_labels,
                                     const AttentionTrainConfig& cfg, Rng& rng);

} // namespace attention
} // namespace dfkd
