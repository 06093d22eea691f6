#include "arch/generator.hpp"

#include <algorithm>
#include <stdexcept>

namespace dfkd {
namespace arch {

Generator::Generator(const GeneratorSpec& spec_, Rng& rng) : spec(spec_) {
    spec.validate();
    const double init_std = 0.02;
    if (spec.upsampling == UpsampleMode::NearestX2) {
        seed_c = spec.base_channels;
        seed_h = spec.out_h / 4;
        seed_w = spec.out_w / 4;
        fc = nn::Linear(spec.noise_dim, seed_c * seed_h * seed_w);
        seed_bn = nn::BatchNorm2d(seed_c);
        int half = spec.base_channels / 2;
        for (int i = 0; i < 2; ++i) {
            Stage s;
            int in_c = spec.base_channels;
            int out_c = (i == 0) ? spec.base_channels : half;
            s.conv = std::make_unique<nn::Conv2d>(in_c, out_c, 3, 1, 1, false);
            s.conv->init_normal(rng, init_std);
            s.bn = nn::BatchNorm2d(out_c);
            stages.push_back(std::move(s));
        }
        out_conv = nn::Conv2d(half, spec.out_c, 3, 1, 1, true);
    } else {
        chain = transposed_chain(spec.out_h, spec.out_w);
        seed_h = chain.seed_h;
        seed_w = chain.seed_w;
        // Widths taper toward base_channels, capped at 8x base near the seed.
        std::vector<int> widths(static_cast<size_t>(chain.doublings) + 1);
        for (int i = 0; i <= chain.doublings; ++i)
            widths[static_cast<size_t>(i)] =
                std::min(8 * spec.base_channels, spec.base_channels << (chain.doublings - i));
        seed_c = widths[0];
        fc = nn::Linear(spec.noise_dim, seed_c * seed_h * seed_w);
        seed_bn = nn::BatchNorm2d(seed_c);
        for (int i = 0; i < chain.doublings; ++i) {
            Stage s;
            s.tconv = std::make_unique<nn::ConvTranspose2d>(widths[static_cast<size_t>(i)],
                                                            widths[static_cast<size_t>(i + 1)], 4, 2, 1, false);
            s.tconv->init_normal(rng, init_std);
            s.bn = nn::BatchNorm2d(widths[static_cast<size_t>(i + 1)]);
            stages.push_back(std::move(s));
        }
        out_conv = nn::Conv2d(widths.back(), spec.out_c, 3, 1, 1, true);
    }
    fc.init_normal(rng, init_std);
    out_conv.init_normal(rng, init_std);
    if (spec.output_block == OutputBlock::TanhThenBn) out_bn = nn::BatchNorm2d(spec.out_c, false);
}

void Generator::collect(nn::Registry& r, const std::string& prefix) {
    fc.collect(r, nn::join_name(prefix, "fc"));
    seed_bn.collect(r, nn::join_name(prefix, "seed_bn"));
    for (size_t i = 0; i < stages.size(); ++i) {
        std::string sp = nn::join_name(prefix, "stage" + std::to_string(i));
        if (stages[i].conv) stages[i].conv->collect(r, nn::join_name(sp, "conv"));
        if (stages[i].tconv) stages[i].tconv->collect(r, nn::join_name(sp, "tconv"));
        stages[i].bn.collect(r, nn::join_name(sp, "bn"));
    }
    out_conv.collect(r, nn::join_name(prefix, "out_conv"));
    if (spec.output_block == OutputBlock::TanhThenBn) out_bn.collect(r, nn::join_name(prefix, "out_bn"));
}

void Generator::set_training(bool on) {
    seed_bn.set_training(on);
    for (auto& s : stages) s.bn.set_training(on);
    if (spec.output_block == OutputBlock::TanhThenBn) out_bn.set_training(on);
}

Var Generator::forward(Tape& t, const Var& z) {
    if (z->value.rank() != 2 || z->value.size(1) != spec.noise_dim)
        throw std::runtime_error("generator: noise batch must be (B," + std::to_string(spec.noise_dim) +
                                 "), got " + z->value.shape_str());
    int batch = z->value.size(0);
    Var y = fc.forward(t, z);
    y = ops::reshape(y, {batch, seed_c, seed_h, seed_w});
    y = seed_bn.forward(t, y);
    if (spec.upsampling == UpsampleMode::NearestX2) {
        for (auto& s : stages) {
            y = ops::upsample_nearest2(y);
            y = ops::leaky_relu(s.bn.forward(t, s.conv->forward(t, y)), 0.2);
        }
    } else {
        y = ops::relu(y);
        for (auto& s : stages) y = ops::relu(s.bn.forward(t, s.tconv->forward(t, y)));
    }
    y = ops::tanh_val(out_conv.forward(t, y));
    if (spec.output_block == OutputBlock::TanhThenBn) y = out_bn.forward(t, y);
    return y;
}

} // namespace arch
} // namespace dfkd
