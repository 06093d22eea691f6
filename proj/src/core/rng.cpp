#include "core/rng.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace dfkd {

double Rng::uniform() {
    // Top 53 bits give a uniform double in [0, 1).
    return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Classic Box-Muller; u1 is shifted into (0, 1] so the log is finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

int64_t Rng::uniform_int(int64_t n) {
    if (n <= 0) throw std::runtime_error("rng: uniform_int needs a positive bound");
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
        x = eng_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
}

void Rng::fill_normal(Tensor& t, double mean, double stddev) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = mean + stddev * normal();
}

void Rng::fill_uniform(Tensor& t, double lo, double hi) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
}

void Rng::save(std::ostream& os) const {
    os << eng_ << " " << (has_spare_ ? 1 : 0) << " ";
    // The spare normal is persisted as raw bits so reload is exact.
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(spare_));
    std::memcpy(&bits, &spare_, sizeof(bits));
    os << bits;
}

void Rng::load(std::istream& is) {
    int spare_flag = 0;
    uint64_t bits = 0;
    is >> eng_ >> spare_flag >> bits;
    if (!is) throw std::runtime_error("rng: malformed serialized state");
    has_spare_ = spare_flag != 0;
    std::memcpy(&spare_, &bits, sizeof(spare_));
}

std::string Rng::state_string() const {
    std::ostringstream os;
    save(os);
    return os.str();
}

void Rng::load_state_string(const std::string& s) {
    std::istringstream is(s);
    load(is);
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t fnv1a64_str(const std::string& s) { return fnv1a64(s.data(), s.size()); }

uint64_t fnv1a64_tensor(const Tensor& t, uint64_t seed) {
    return fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(double), seed);
}

std::string hash_hex(uint64_t h) {
    char buf[20];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace dfkd
