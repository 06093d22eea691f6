#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arch/generator.hpp"
#include "arch/student.hpp"
#include "arch/teacher.hpp"
#include "attention/attention.hpp"

namespace dfkd {
namespace eval {

// Top-1 accuracies, all in percent.
struct EvalReport {
    std::vector<double> per_header_acc;
    double ensemble_acc = 0.0;
    bool has_attention = false;
    double attention_acc = 0.0;
    std::vector<double> teacher_accs;
    double teacher_ensemble_acc = 0.0;

    std::string json() const;
};

// Shared argmax/accuracy primitives; ties resolve to the lowest index.
int argmax_row(const Tensor& logits, int row);
double accuracy_percent(const Tensor& logits, const std::vector<int>& labels);
// Accuracy of the arithmetic logit mean (never a vote over member argmaxes).
double ensemble_accuracy_percent(const std::vector<Tensor>& member_logits,
                                 const std::vector<int>& labels);

// Accuracy of every header, their logit-mean ensemble, the optional
// attention aggregation, and each teacher, on a held-out split. Models run
// in eval mode and are left unchanged.
EvalReport evaluate(arch::MultiHeadStudent& student, arch::TeacherBundle& teachers,
                    const Tensor& images, const std::vector<int>& labels,
                    attention::AttentionHead* head = nullptr, int batch_size = 64);

// Static cost of one model: exact parameter count plus multiply-accumulates
// for a single forward pass at a stated input size. One MAC counts as one
// FLOP; convolution and linear layers only, normalization/activations free.
struct LayerCost {
    std::string name;
    int64_t params = 0;
    int64_t macs = 0;
};

struct ModelCost {
    std::vector<LayerCost> layers;
    int64_t params = 0;
    int64_t macs = 0;
    std::string convention = "1 FLOP = 1 multiply-accumulate; convolutions and linear layers only";

    std::string json() const;
};

// Residual or small-cnn classifier under a teacher spec.
ModelCost classifier_cost(const arch::TeacherSpec& spec, int in_h, int in_w);
// Multi-header student with feature sharing, including header classifiers.
ModelCost student_cost(const arch::StudentSpec& spec, int in_h, int in_w);

// Row label n holds the summed predictive distributions (softmax of logits)
// of every sample labeled n.
struct ConfusionRecord {
    int classes = 0;
    bool normalized = false;
    std::vector<double> matrix; // row-major classes x classes

    double at(int row, int col) const { return matrix[static_cast<size_t>(row) * classes + col]; }
    double& at(int row, int col) { return matrix[static_cast<size_t>(row) * classes + col]; }
    void merge(const ConfusionRecord& other); // associative accumulation
    void row_normalize();                     // nonempty rows end up summing to 1
    double off_diagonal_fraction() const;     // off-diagonal mass / total mass
    void write_csv(const std::string& path) const;
};

enum class RowLabel {
    GroundTruth, // rows indexed by the provided labels
    ModelArgmax  // rows indexed by the model's own top prediction
};

ConfusionRecord confusion_matrix(arch::ClassifierNet& model, const Tensor& samples,
                                 const std::vector<int>& labels, RowLabel labeling,
                                 int batch_size = 64);

// Gradient-weighted activation map at the model's final convolutional stage
// for one (C,H,W) sample, resized to the input resolution and min-max
// normalized to [0,1]; a flat map (zero gradients included) comes back all
// zero. Returns (H,W).
Tensor gradcam_map(arch::ClassifierNet& model, const Tensor& chw, int target_class);
// Same at one student header's final block.
Tensor gradcam_map_header(arch::MultiHeadStudent& student, const Tensor& chw, int header,
                          int target_class);

// rows x cols generated samples tiled into one image written at path; the
// same seed always produces the same bytes.
void export_sample_grid(arch::Generator& generator, int rows, int cols, uint64_t seed,
                        const std::string& path);

} // namespace eval
} // namespace dfkd
