#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pcode {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void check(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
}

// Deterministic 64-bit mixer, used to derive independent streams from
// (master seed, index) pairs.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Small deterministic RNG. std::mt19937_64 distributions are
// implementation-defined, so draws are derived from raw bits directly.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64() {
        state_ = splitmix64_step(state_);
        return mix(state_);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    Rng fork(uint64_t index) const { return Rng(mix(state_ + 0x632be59bd9b4e019ull * (index + 1))); }

private:
    static uint64_t splitmix64_step(uint64_t s) { return s + 0x9e3779b97f4a7c15ull; }
    static uint64_t mix(uint64_t x) {
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }
    uint64_t state_;
};

} // namespace pcode
