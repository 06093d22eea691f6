#pragma once

#include <string>
#include <vector>

namespace dfkd {
namespace arch {

// ---- generator ----

enum class UpsampleMode { NearestX2, TransposedConvK4 };
enum class OutputBlock { TanhThenBn, TanhOnly };

struct GeneratorSpec {
    int noise_dim = 256;
    int out_h = 32;
    int out_w = 32;
    int out_c = 3;
    int base_channels = 128;
    UpsampleMode upsampling = UpsampleMode::NearestX2;
    OutputBlock output_block = OutputBlock::TanhThenBn;

    void validate() const; // throws on impossible dimensions
    std::string describe() const;
};

// Seed resolution for the transposed-conv chain: the longest run of k4/s2/p1
// doublings whose starting size lands in [4, 7] for both dimensions.
// 128x128 -> seed 4x4 with 5 doublings; 224x224 -> seed 7x7 with 5 doublings.
struct UpsampleChain {
    int seed_h = 0;
    int seed_w = 0;
    int doublings = 0;
};
UpsampleChain transposed_chain(int out_h, int out_w); // throws if unreachable

UpsampleMode upsample_mode_from_string(const std::string& s);
OutputBlock output_block_from_string(const std::string& s);
std::string to_string(UpsampleMode m);
std::string to_string(OutputBlock b);

// ---- backbones ----

// A backbone is a stem conv plus M groups of residual blocks; each group is a
// feature-sharing tap. channels/blocks/strides all have length M.
struct BackbonePlan {
    std::string name;
    int stem_channels = 0;
    std::vector<int> channels;
    std::vector<int> blocks;
    std::vector<int> strides;

    int groups() const { return static_cast<int>(channels.size()); }
    int final_channels() const { return channels.back(); }
};

// Known plans: resnet18, resnet34 (3x3-stem variants for small inputs),
// tiny8, tiny16 (three-group desk-scale nets).
BackbonePlan backbone_plan(const std::string& name); // throws on unknown name

// ---- student ----

struct StudentSpec {
    std::string backbone = "resnet18";
    int num_headers = 3;
    int num_classes = 10;
    // 0 disables the optional per-header linear projection of the pooled
    // feature; a positive value maps the feature to that dimension before the
    // feature loss (for teacher/student width mismatches).
    int feature_projection_dim = 0;

    void validate() const;
    std::string describe() const;
};

// Channel plan of one header: blocks[j] consumes in_channels[j] and produces
// out_channels[j]. Input is the first tap for block 0 and the concatenation
// of tap j-1 with the previous header block output afterwards.
struct HeaderChannelPlan {
    std::vector<int> in_channels;
    std::vector<int> out_channels;
    std::vector<int> strides;
};
HeaderChannelPlan header_channel_plan(const BackbonePlan& plan);

// ---- teachers ----

struct TeacherSpec {
    std::string arch = "resnet34"; // resnet18/resnet34/tiny8/tiny16/smallcnn
    int num_classes = 10;

    std::string describe() const;
};

} // namespace arch
} // namespace dfkd
