#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace kfc {

// Deterministic random stream. Gaussian draws go through an explicit
// Box-Muller transform so the byte stream does not depend on the standard
// library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    // Uniform in [0, 1).
    double uniform() {
        return (engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double std = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + std * r * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    std::uint64_t raw() { return engine_(); }

    // Independent child stream, e.g. one per episode or per tuple index.
    // Children of the same parent with distinct salts do not overlap.
    Rng fork(std::uint64_t salt) const {
        std::uint64_t s = seed_ ^ (salt * 0x9e3779b97f4a7c15ull) ^ 0xd1b54a32d192ed03ull;
        s ^= s >> 33;
        s *= 0xff51afd7ed558ccdull;
        s ^= s >> 33;
        return Rng(s);
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

}  // namespace kfc
