#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "core/tensor.hpp"

namespace dfkd {

// Deterministic random source with explicit state serialization so a resumed
// run continues the exact sample sequence. Normal draws use Box-Muller on top
// of raw 53-bit uniforms instead of std::normal_distribution, whose output is
// implementation defined.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1).
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Standard normal.
    double normal();
    // Unbiased integer in [0, n). n must be positive.
    int64_t uniform_int(int64_t n);

    void fill_normal(Tensor& t, double mean = 0.0, double stddev = 1.0);
    void fill_uniform(Tensor& t, double lo, double hi);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    void save(std::ostream& os) const;
    void load(std::istream& is);
    std::string state_string() const;
    void load_state_string(const std::string& s);

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a 64-bit hash, used for config/architecture/blob fingerprints.
uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 14695981039346656037ull);
uint64_t fnv1a64_str(const std::string& s);
uint64_t fnv1a64_tensor(const Tensor& t, uint64_t seed = 14695981039346656037ull);
std::string hash_hex(uint64_t h);

} // namespace dfkd
