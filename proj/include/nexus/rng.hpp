#pragma once
#include <cmath>
#include <cstdint>
#include <numbers>

#include "nexus/matrix.hpp"

namespace nexus {

// splitmix64: one u64 of state, passes the usual statistical batteries, and
// the whole generator state serializes as a single integer in checkpoints.
struct Rng {
    std::uint64_t state;

    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double next_f64() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Box-Muller, no spare-value caching so the state stays a pure u64 and a
    // reloaded checkpoint continues the exact same stream.
    double next_gaussian() {
        double u1 = next_f64();
        while (u1 <= 0.0) u1 = next_f64();
        double u2 = next_f64();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        return next_u64() % n;
    }

    // Independent child stream, e.g. one per weight tensor.
    Rng fork() { return Rng(next_u64()); }
};

inline Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = stddev * rng.next_gaussian();
    return m;
}

} // namespace nexus
