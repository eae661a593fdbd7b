#pragma once

#include <cstdint>

namespace mdsa {

// Deterministic generator used by all synthetic-data code paths.
// splitmix64 core: output for a given seed is identical on every
// platform, unlike the standard library distributions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n). Modulo bias is irrelevant at our n.
    uint64_t uniform(uint64_t n) { return n ? next_u64() % n : 0; }

    // Uniform in [lo, hi] inclusive.
    uint64_t range(uint64_t lo, uint64_t hi) { return lo + uniform(hi - lo + 1); }

    uint8_t byte() { return static_cast<uint8_t>(next_u64() & 0xff); }

    bool chance(double p) {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 < p;
    }

    double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

private:
    uint64_t state_;
};

} // namespace mdsa
