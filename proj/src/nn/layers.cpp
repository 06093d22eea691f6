#include "nn/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "core/blob.hpp"

namespace dfkd {
namespace nn {

std::vector<Parameter*> Module::parameters() {
    Registry r;
    collect(r, "");
    std::vector<Parameter*> out;
    out.reserve(r.params.size());
    for (auto& [name, p] : r.params) {
        p->name = name;
        out.push_back(p);
    }
    return out;
}

void Module::set_trainable(bool on) {
    for (Parameter* p : parameters()) p->trainable = on;
}

void Module::zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
}

int64_t Module::param_count() {
    int64_t n = 0;
    for (Parameter* p : parameters()) n += p->value.numel();
    return n;
}

uint64_t Module::state_hash() {
    Registry r;
    collect(r, "");
    uint64_t h = 14695981039346656037ull;
    for (auto& [name, p] : r.params) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64_tensor(p->value, h);
    }
    for (auto& [name, t] : r.buffers) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64_tensor(*t, h);
    }
    return h;
}

uint64_t Module::structure_hash() {
    Registry r;
    collect(r, "");
    uint64_t h = 14695981039346656037ull;
    auto fold_shape = [&h](const std::string& name, const Tensor& t) {
        h = fnv1a64(name.data(), name.size(), h);
        for (int d : t.shape()) {
            int64_t v = d;
            h = fnv1a64(&v, sizeof v, h);
        }
    };
    for (auto& [name, p] : r.params) fold_shape(name, p->value);
    for (auto& [name, t] : r.buffers) fold_shape(name, *t);
    return h;
}

void Module::save_state(const std::string& path) {
    Registry r;
    collect(r, "");
    BlobWriter w;
    for (auto& [name, p] : r.params) w.add(name, p->value);
    for (auto& [name, t] : r.buffers) w.add(name, *t);
    w.write(path);
}

void Module::load_state(const std::string& path) {
    Registry r;
    collect(r, "");
    auto blob = blob_read(path);
    size_t expected = r.params.size() + r.buffers.size();
    if (blob.size() != expected)
        throw std::runtime_error("load_state: " + path + " holds " + std::to_string(blob.size()) +
                                 " tensors, model expects " + std::to_string(expected));
    auto fetch = [&](const std::string& name, const std::vector<int>& shape) -> Tensor& {
        auto it = blob.find(name);
        if (it == blob.end()) throw std::runtime_error("load_state: " + path + " is missing tensor '" + name + "'");
        if (it->second.shape() != shape)
            throw std::runtime_error("load_state: tensor '" + name + "' has shape " + it->second.shape_str() +
                                     ", model expects " + shape_to_string(shape));
        return it->second;
    };
    for (auto& [name, p] : r.params) p->value = fetch(name, p->value.shape());
    for (auto& [name, t] : r.buffers) *t = fetch(name, t->shape());
}

FreezeGuard::FreezeGuard(Module& m) {
    for (Parameter* p : m.parameters()) {
        saved_.emplace_back(p, p->trainable);
        p->trainable = false;
    }
}

FreezeGuard::~FreezeGuard() {
    for (auto& [p, was] : saved_) p->trainable = was;
}

// ---- Conv2d ----

Conv2d::Conv2d(int in_channels, int out_channels, int kernel_size, int stride_, int pad_,
               bool bias, int groups_)
    : has_bias(bias), in_c(in_channels), out_c(out_channels), kernel(kernel_size),
      stride(stride_), pad(pad_), groups(groups_) {
    if (in_channels % groups_ != 0)
        throw std::runtime_error("conv2d: channels " + std::to_string(in_channels) +
                                 " not divisible by groups " + std::to_string(groups_));
    w = Parameter(Tensor({out_channels, in_channels / groups_, kernel_size, kernel_size}));
    if (bias) b = Parameter(Tensor({out_channels}));
}

void Conv2d::init_kaiming(Rng& rng) {
    double fan_in = static_cast<double>(in_c / groups) * kernel * kernel;
    rng.fill_normal(w.value, 0.0, std::sqrt(2.0 / fan_in));
    if (has_bias) b.value.zero();
}

void Conv2d::init_normal(Rng& rng, double stddev) {
    rng.fill_normal(w.value, 0.0, stddev);
    if (has_bias) b.value.zero();
}

void Conv2d::collect(Registry& r, const std::string& prefix) {
    r.add(join_name(prefix, "w"), &w);
    if (has_bias) r.add(join_name(prefix, "b"), &b);
}

Var Conv2d::forward(Tape& t, const Var& x) {
    return ops::conv2d(x, t.leaf(w), has_bias ? t.leaf(b) : nullptr, stride, pad, groups);
}

// ---- ConvTranspose2d ----

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel_size, int stride_,
                                 int pad_, bool bias)
    : has_bias(bias), in_c(in_channels), out_c(out_channels), kernel(kernel_size),
      stride(stride_), pad(pad_) {
    w = Parameter(Tensor({in_channels, out_channels, kernel_size, kernel_size}));
    if (bias) b = Parameter(Tensor({out_channels}));
}

void ConvTranspose2d::init_normal(Rng& rng, double stddev) {
    rng.fill_normal(w.value, 0.0, stddev);
    if (has_bias) b.value.zero();
}

void ConvTranspose2d::collect(Registry& r, const std::string& prefix) {
    r.add(join_name(prefix, "w"), &w);
    if (has_bias) r.add(join_name(prefix, "b"), &b);
}

Var ConvTranspose2d::forward(Tape& t, const Var& x) {
    return ops::conv_transpose2d(x, t.leaf(w), has_bias ? t.leaf(b) : nullptr, stride, pad);
}

// ---- Linear ----

Linear::Linear(int in_dim, int out_dim) : in_d(in_dim), out_d(out_dim) {
    w = Parameter(Tensor({out_dim, in_dim}));
    b = Parameter(Tensor({out_dim}));
}

void Linear::init_kaiming(Rng& rng) {
    rng.fill_normal(w.value, 0.0, std::sqrt(2.0 / static_cast<double>(in_d)));
    b.value.zero();
}

void Linear::init_normal(Rng& rng, double stddev) {
    rng.fill_normal(w.value, 0.0, stddev);
    b.value.zero();
}

void Linear::collect(Registry& r, const std::string& prefix) {
    r.add(join_name(prefix, "w"), &w);
    r.add(join_name(prefix, "b"), &b);
}

Var Linear::forward(Tape& t, const Var& x) {
    return ops::linear(x, t.leaf(w), t.leaf(b));
}

// ---- BatchNorm2d ----

BatchNorm2d::BatchNorm2d(int channels_, bool affine_) : affine(affine_), channels(channels_) {
    if (affine) {
        gamma = Parameter(Tensor({channels_}, 1.0));
        beta = Parameter(Tensor({channels_}, 0.0));
    }
    running_mean = Tensor({channels_}, 0.0);
    running_var = Tensor({channels_}, 1.0);
}

void BatchNorm2d::collect(Registry& r, const std::string& prefix) {
    if (affine) {
        r.add(join_name(prefix, "gamma"), &gamma);
        r.add(join_name(prefix, "beta"), &beta);
    }
    r.add_buffer(join_name(prefix, "running_mean"), &running_mean);
    r.add_buffer(join_name(prefix, "running_var"), &running_var);
}

Var BatchNorm2d::forward(Tape& t, const Var& x) {
    if (training) {
        Tensor batch_mean, batch_var;
        Var y = ops::batchnorm_train(x, affine ? t.leaf(gamma) : nullptr,
                                     affine ? t.leaf(beta) : nullptr, eps, &batch_mean, &batch_var);
        for (int c = 0; c < channels; ++c) {
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * batch_mean[c];
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * batch_var[c];
        }
        return y;
    }
    return ops::batchnorm_eval(x, affine ? t.leaf(gamma) : nullptr,
                               affine ? t.leaf(beta) : nullptr, running_mean, running_var, eps);
}

Var BatchNorm2d::forward_observe(Tape& t, const Var& x, BnObservation* obs) {
    if (obs) {
        Var mu = ops::channel_mean(x);
        Var sigma = ops::sqrt_val(ops::channel_var_biased(x, mu));
        obs->mean_batch = mu;
        obs->sigma_batch = sigma;
        obs->mean_stored = running_mean;
        Tensor sd({channels});
        for (int c = 0; c < channels; ++c) sd[c] = std::sqrt(running_var[c]);
        obs->sigma_stored = std::move(sd);
    }
    return ops::batchnorm_eval(x, affine ? t.leaf(gamma) : nullptr,
                               affine ? t.leaf(beta) : nullptr, running_mean, running_var, eps);
}

} // namespace nn
} // namespace dfkd
