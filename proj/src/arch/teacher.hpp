#pragma once

#include <memory>
#include <string>
#include <vector>

#include "arch/specs.hpp"
#include "arch/student.hpp"
#include "nn/layers.hpp"

namespace dfkd {
namespace arch {

struct NetOutput {
    Var logits;   // (B, C)
    Var feature;  // (B, D), pre-classifier pooled feature
    Var last_map; // (B, K, h, w), final conv-stage activation (class activation maps)
    std::vector<nn::BnObservation> bn_obs; // filled when capture was requested
};

// Any image classifier that can report its pooled feature and, on request,
// the batch statistics its input induces at every BN layer.
struct ClassifierNet : nn::Module {
    virtual NetOutput forward(Tape& t, const Var& x, bool capture) = 0;
    virtual int feature_dim() const = 0;
    virtual int num_bn_layers() const = 0;
    virtual std::string describe() const = 0;
};

// Residual classifier: backbone plan + global average pooling + linear head.
struct ResNetClassifier : ClassifierNet {
    Backbone backbone;
    nn::Linear fc;
    TeacherSpec spec;

    ResNetClassifier(const TeacherSpec& spec_, const BackbonePlan& plan, Rng& rng);
    void collect(nn::Registry& r, const std::string& prefix) override;
    void set_training(bool on) override;
    NetOutput forward(Tape& t, const Var& x, bool capture) override;
    int feature_dim() const override { return backbone.plan.final_channels(); }
    int num_bn_layers() const override;
    std::string describe() const override { return spec.describe(); }
};

// Four conv-BN-ReLU stages and a linear head; widths w, 2w, 4w, 4w with
// strides 1,2,2,1. Small and quick to pretrain.
struct SmallCnn : ClassifierNet {
    std::vector<std::unique_ptr<nn::Conv2d>> convs;
    std::vector<std::unique_ptr<nn::BatchNorm2d>> bns;
    nn::Linear fc;
    TeacherSpec spec;
    int width;

    SmallCnn(const TeacherSpec& spec_, int width_, Rng& rng);
    void collect(nn::Registry& r, const std::string& prefix) override;
    void set_training(bool on) override;
    NetOutput forward(Tape& t, const Var& x, bool capture) override;
    int feature_dim() const override { return 4 * width; }
    int num_bn_layers() const override { return static_cast<int>(bns.size()); }
    std::string describe() const override;
};

// arch strings: resnet18/resnet34/tiny8/tiny16 (residual) or smallcnn8/16/...
std::unique_ptr<ClassifierNet> build_classifier(const TeacherSpec& spec, Rng& rng);

// Frozen teacher ensemble. Forward passes never mutate the models; capture
// reports per-layer batch statistics alongside the frozen stored ones.
struct TeacherBundle {
    std::vector<std::unique_ptr<ClassifierNet>> teachers;
    int num_classes = 0;
    int feature_dim = 0;

    int count() const { return static_cast<int>(teachers.size()); }
    void freeze(); // eval mode + non-trainable, bundle invariant during distillation
    std::vector<NetOutput> forward_all(Tape& t, const Var& x, bool capture);
    uint64_t state_fingerprint();
};

} // namespace arch
} // namespace dfkd
