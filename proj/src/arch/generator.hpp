#pragma once

#include <memory>
#include <vector>

#include "arch/specs.hpp"
#include "nn/layers.hpp"

namespace dfkd {
namespace arch {

// Noise-to-image generator. Two layouts share a dense seed projection:
//  - nearest_x2: seed at (H/4, W/4), two nearest-neighbor x2 upsampling
//    stages each followed by conv3x3 + BN + LeakyReLU(0.2).
//  - transposed_conv_k4: seed in [4,7] per side, then k=4/s=2/p=1 transposed
//    convs (+ BN + ReLU) doubling until the target size.
// Both end in conv3x3 -> tanh, optionally followed by a non-affine BN.
struct Generator : nn::Module {
    GeneratorSpec spec;
    UpsampleChain chain; // transposed mode only

    nn::Linear fc;
    nn::BatchNorm2d seed_bn;
    struct Stage {
        std::unique_ptr<nn::Conv2d> conv;            // nearest mode
        std::unique_ptr<nn::ConvTranspose2d> tconv;  // transposed mode
        nn::BatchNorm2d bn;
    };
    std::vector<Stage> stages;
    nn::Conv2d out_conv;
    nn::BatchNorm2d out_bn; // used only for tanh_then_bn

    int seed_c = 0, seed_h = 0, seed_w = 0;

    Generator(const GeneratorSpec& spec_, Rng& rng);
    void collect(nn::Registry& r, const std::string& prefix) override;
    void set_training(bool on) override;
    // z: (B, noise_dim) -> (B, out_c, out_h, out_w)
    Var forward(Tape& t, const Var& z);
    std::string describe() const { return spec.describe(); }
};

} // namespace arch
} // namespace dfkd
