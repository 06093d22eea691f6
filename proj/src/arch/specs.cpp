#include "arch/specs.hpp"

#include <sstream>
#include <stdexcept>

namespace dfkd {
namespace arch {

void GeneratorSpec::validate() const {
    if (noise_dim <= 0) throw std::runtime_error("generator spec: noise_dim must be positive");
    if (out_h <= 0 || out_w <= 0 || out_c <= 0)
        throw std::runtime_error("generator spec: output dimensions must be positive");
    if (base_channels <= 0 || base_channels % 2 != 0)
        throw std::runtime_error("generator spec: base_channels must be positive and even");
    if (upsampling == UpsampleMode::NearestX2) {
        if (out_h % 4 != 0 || out_w % 4 != 0)
            throw std::runtime_error("generator spec: nearest_x2 needs output dimensions divisible by 4, got " +
                                     std::to_string(out_h) + "x" + std::to_string(out_w));
    } else {
        (void)transposed_chain(out_h, out_w); // throws when unreachable
    }
}

std::string GeneratorSpec::describe() const {
    std::ostringstream os;
    os << "generator(noise=" << noise_dim << ",out=" << out_c << "x" << out_h << "x" << out_w
       << ",base=" << base_channels << ",up=" << to_string(upsampling)
       << ",out_block=" << to_string(output_block) << ")";
    return os.str();
}

UpsampleChain transposed_chain(int out_h, int out_w) {
    // Walk down by halving; the deepest chain wins, so stop at the smallest
    // seed in [4,7] reachable by exact halvings of both dimensions.
    int h = out_h, w = out_w, l = 0;
    UpsampleChain best;
    bool found = false;
    while (h >= 4 && w >= 4) {
        if (h <= 7 && w <= 7) {
            best = {h, w, l};
            found = true; // keep halving: a deeper chain may still fit
        }
        if (h % 2 != 0 || w % 2 != 0) break;
        h /= 2;
        w /= 2;
        ++l;
    }
    if (!found)
        throw std::runtime_error("generator spec: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                                 " is not reachable from a 4..7 seed by doubling transposed convolutions");
    return best;
}

UpsampleMode upsample_mode_from_string(const std::string& s) {
    if (s == "nearest_x2") return UpsampleMode::NearestX2;
    if (s == "transposed_conv_k4") return UpsampleMode::TransposedConvK4;
    throw std::runtime_error("unknown upsampling mode '" + s + "' (expected nearest_x2 or transposed_conv_k4)");
}

OutputBlock output_block_from_string(const std::string& s) {
    if (s == "tanh_then_bn") return OutputBlock::TanhThenBn;
    if (s == "tanh_only") return OutputBlock::TanhOnly;
    throw std::runtime_error("unknown output block '" + s + "' (expected tanh_then_bn or tanh_only)");
}

std::string to_string(UpsampleMode m) {
    return m == UpsampleMode::NearestX2 ? "nearest_x2" : "transposed_conv_k4";
}

std::string to_string(OutputBlock b) {
    return b == OutputBlock::TanhThenBn ? "tanh_then_bn" : "tanh_only";
}

BackbonePlan backbone_plan(const std::string& name) {
    BackbonePlan p;
    p.name = name;
    if (name == "resnet18") {
        p.stem_channels = 64;
        p.channels = {64, 128, 256, 512};
        p.blocks = {2, 2, 2, 2};
        p.strides = {1, 2, 2, 2};
    } else if (name == "resnet34") {
        p.stem_channels = 64;
        p.channels = {64, 128, 256, 512};
        p.blocks = {3, 4, 6, 3};
        p.strides = {1, 2, 2, 2};
    } else if (name == "tiny8") {
        p.stem_channels = 8;
        p.channels = {8, 16, 32};
        p.blocks = {1, 1, 1};
        p.strides = {1, 2, 2};
    } else if (name == "tiny16") {
        p.stem_channels = 16;
        p.channels = {16, 32, 64};
        p.blocks = {1, 1, 1};
        p.strides = {1, 2, 2};
    } else if (name == "micro1") {
        p.stem_channels = 8;
        p.channels = {8};
        p.blocks = {1};
        p.strides = {1};
    } else {
        throw std::runtime_error("unknown backbone plan '" + name + "'");
    }
    return p;
}

void StudentSpec::validate() const {
    if (num_headers < 1) throw std::runtime_error("student spec: needs at least one header");
    if (num_classes < 2) throw std::runtime_error("student spec: needs at least two classes");
    if (feature_projection_dim < 0) throw std::runtime_error("student spec: projection dim must be >= 0");
    (void)backbone_plan(backbone); // throws on unknown name
}

std::string StudentSpec::describe() const {
    std::ostringstream os;
    os << "student(backbone=" << backbone << ",headers=" << num_headers
       << ",classes=" << num_classes << ",proj=" << feature_projection_dim << ")";
    return os.str();
}

HeaderChannelPlan header_channel_plan(const BackbonePlan& plan) {
    HeaderChannelPlan h;
    int m = plan.groups();
    h.in_channels.resize(static_cast<size_t>(m));
    h.out_channels.resize(static_cast<size_t>(m));
    h.strides = plan.strides;
    for (int j = 0; j < m; ++j) {
        h.in_channels[static_cast<size_t>(j)] = (j == 0) ? plan.channels[0] : 2 * plan.channels[static_cast<size_t>(j - 1)];
        h.out_channels[static_cast<size_t>(j)] = plan.channels[static_cast<size_t>(j)];
    }
    return h;
}

std::string TeacherSpec::describe() const {
    return "teacher(arch=" + arch + ",classes=" + std::to_string(num_classes) + ")";
}

} // namespace arch
} // namespace dfkd
