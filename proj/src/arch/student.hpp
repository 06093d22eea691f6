#pragma once

#include <memory>
#include <vector>

#include "arch/specs.hpp"
#include "nn/layers.hpp"

namespace dfkd {
namespace arch {

// Standard two-conv residual block with an optional projection shortcut.
struct BasicBlock : nn::Module {
    nn::Conv2d conv1, conv2;
    nn::BatchNorm2d bn1, bn2;
    bool has_projection = false;
    nn::Conv2d proj_conv;
    nn::BatchNorm2d proj_bn;

    BasicBlock(int in_c, int out_c, int stride, Rng& rng);
    void collect(nn::Registry& r, const std::string& prefix) override;
    void set_training(bool on) override;
    Var forward(Tape& t, const Var& x);
};

// Stem conv plus M groups of residual blocks. forward_taps returns the output
// of every group (the feature-sharing taps).
struct Backbone : nn::Module {
    BackbonePlan plan;
    nn::Conv2d stem;
    nn::BatchNorm2d stem_bn;
    std::vector<std::vector<std::unique_ptr<BasicBlock>>> groups;

    Backbone(const BackbonePlan& plan_, Rng& rng);
    void collect(nn::Registry& r, const std::string& prefix) override;
    void set_training(bool on) override;
    std::vector<Var> forward_taps(Tape& t, const Var& x);
};

// Two depthwise-separable units; each is depthwise 3x3 -> pointwise 1x1 ->
// batch norm -> ReLU. The first unit carries the stride; no conv biases.
struct HeaderBlock : nn::Module {
    nn::Conv2d dw1, pw1, dw2, pw2;
    nn::BatchNorm2d bn1, bn2;

    HeaderBlock(int in_c, int out_c, int stride, Rng& rng);
    void collect(nn::Registry& r, const std::string& prefix) override;
    void set_training(bool on) override;
    Var forward(Tape& t, const Var& x);
};

struct StudentOut {
    std::vector<Var> header_logits;   // N of (B, C)
    std::vector<Var> header_features; // N of (B, D)
    std::vector<Var> header_maps;     // N of (B, c_M, h, w), pre-pooling
    Var ensemble_logits;              // (B, C), mean of header logits
};

// Shared backbone with N header branches. Header block 0 of a branch reads
// the first tap; block j>0 reads the channel-concatenation of tap j-1 and the
// branch's previous block output, so strides must mirror the backbone's.
struct MultiHeadStudent : nn::Module {
    struct Header {
        std::vector<std::unique_ptr<HeaderBlock>> blocks;
        std::unique_ptr<nn::Linear> projection; // optional feature projection
        nn::Linear classifier;
        Header(const HeaderChannelPlan& plan, int classes, int proj_dim, Rng& rng);
    };

    StudentSpec spec;
    BackbonePlan plan;
    Backbone backbone;
    std::vector<std::unique_ptr<Header>> headers;

    MultiHeadStudent(const StudentSpec& spec_, Rng& rng);
    void collect(nn::Registry& r, const std::string& prefix) override;
    void set_training(bool on) override;
    StudentOut forward(Tape& t, const Var& x);

    int num_headers() const { return spec.num_headers; }
    // Dimension of header_features entries (after projection when enabled).
    int feature_dim() const;
    std::string describe() const;
};

// Throws naming the first block whose channels break the concatenation rule.
void validate_header_plan(const BackbonePlan& plan, const HeaderChannelPlan& header);

} // namespace arch
} // namespace dfkd
