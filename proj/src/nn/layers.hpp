#pragma once

#include <memory>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"

namespace dfkd {
namespace nn {

struct Registry {
    std::vector<std::pair<std::string, Parameter*>> params;
    std::vector<std::pair<std::string, Tensor*>> buffers;

    void add(const std::string& name, Parameter* p) { params.emplace_back(name, p); }
    void add_buffer(const std::string& name, Tensor* t) { buffers.emplace_back(name, t); }
};

inline std::string join_name(const std::string& prefix, const std::string& local) {
    return prefix.empty() ? local : prefix + "." + local;
}

// Base for anything with learnable state. collect() reports every parameter
// and running buffer under a stable hierarchical name; save/load and the
// fingerprint helpers all key off those names.
struct Module {
    virtual ~Module() = default;
    virtual void collect(Registry& r, const std::string& prefix) = 0;
    virtual void set_training(bool on) { (void)on; }

    std::vector<Parameter*> parameters();
    void set_trainable(bool on);
    void zero_grad();
    int64_t param_count();
    uint64_t state_hash();     // over parameter and buffer values, order-stable
    uint64_t structure_hash(); // over names and shapes only, value-independent
    void save_state(const std::string& path);
    void load_state(const std::string& path);
};

// Temporarily marks a module's parameters non-trainable (used while the
// generator trains against a frozen student).
class FreezeGuard {
public:
    explicit FreezeGuard(Module& m);
    ~FreezeGuard();
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<std::pair<Parameter*, bool>> saved_;
};

struct Conv2d : Module {
    Parameter w, b;
    bool has_bias = false;
    int in_c = 0, out_c = 0, kernel = 0, stride = 1, pad = 0, groups = 1;

    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel_size, int stride_, int pad_,
           bool bias, int groups_ = 1);
    void init_kaiming(Rng& rng);
    void init_normal(Rng& rng, double stddev);
    void collect(Registry& r, const std::string& prefix) override;
    Var forward(Tape& t, const Var& x);
};

struct ConvTranspose2d : Module {
    Parameter w, b;
    bool has_bias = false;
    int in_c = 0, out_c = 0, kernel = 0, stride = 1, pad = 0;

    ConvTranspose2d() = default;
    ConvTranspose2d(int in_channels, int out_channels, int kernel_size, int stride_, int pad_, bool bias);
    void init_normal(Rng& rng, double stddev);
    void collect(Registry& r, const std::string& prefix) override;
    Var forward(Tape& t, const Var& x);
};

struct Linear : Module {
    Parameter w, b;
    int in_d = 0, out_d = 0;

    Linear() = default;
    Linear(int in_dim, int out_dim);
    void init_kaiming(Rng& rng);
    void init_normal(Rng& rng, double stddev);
    void collect(Registry& r, const std::string& prefix) override;
    Var forward(Tape& t, const Var& x);
};

// Batch statistics of one normalization layer observed on a synthesized
// batch, next to the frozen model's stored statistics. sigma values are
// standard deviations (square roots of the biased variance / the stored
// running variance).
struct BnObservation {
    Var mean_batch;
    Var sigma_batch;
    Tensor mean_stored;
    Tensor sigma_stored;
};

struct BatchNorm2d : Module {
    Parameter gamma, beta;
    Tensor running_mean, running_var;
    bool affine = true;
    bool training = true;
    int channels = 0;
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels_, bool affine_ = true);
    void collect(Registry& r, const std::string& prefix) override;
    void set_training(bool on) override { training = on; }

    // Training mode normalizes with biased batch statistics and refreshes the
    // running estimates (also biased, one consistent convention everywhere).
    // Eval mode normalizes with the stored running statistics.
    Var forward(Tape& t, const Var& x);
    // Eval-mode normalization that additionally reports the batch statistics
    // this input induces, as differentiable graph values.
    Var forward_observe(Tape& t, const Var& x, BnObservation* obs);
};

} // namespace nn
} // namespace dfkd
