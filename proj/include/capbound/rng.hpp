#pragma once

#include <cmath>
#include <cstdint>

namespace capbound {

// SplitMix64 finalizer. Full-period 64-bit avalanche.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derives one stream id from up to three coordinates (step, layer, sample).
inline std::uint64_t stream_id(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    return mix64(a ^ mix64(b ^ mix64(c)));
}

// Counter-based generator: draw i of stream s under a seed is a pure function
// of (seed, s, i). Any consumer can be replayed without replaying the others,
// which is what makes per-(step, layer, sample) masks reproducible.
class CounterRng {
public:
    using result_type = std::uint64_t;

    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key_(mix64(seed ^ mix64(stream ^ 0x6a09e667f3bcc908ull))) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~0ull; }

    result_type operator()() { return mix64(key_ ^ counter_++); }

    // 53 mantissa bits, uniform in [0, 1).
    double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller. Consumes exactly two draws per value.
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 == 0.0) u1 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.141592653589793238462643 * u2);
    }

    // Unbiased integer in [0, n) via rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t v = (*this)();
        while (v >= limit) v = (*this)();
        return v % n;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}
