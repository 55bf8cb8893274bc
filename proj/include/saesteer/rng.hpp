#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace saesteer {

// Deterministic PRNG used for every stochastic choice in the toolkit
// (weight init, toy SAE noise, RMU direction, suffix sampling).
//
// The algorithm is fixed so that reimplementations in other languages can
// reproduce streams bit-for-bit:
//   * core generator: splitmix64 (Steele, Lea, Flood 2014),
//       state += 0x9E3779B97F4A7C15
//       z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9
//       z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31
//   * uniform double in [0,1): (next_u64() >> 11) * 2^-53
//   * uniform integer in [0,n): next_u64() % n  (modulo; bias is < n/2^64)
//   * standard normal: Box-Muller, consuming exactly two uniforms,
//       z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
//     (no cached spare; the sine half is discarded)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0,n). n must be > 0.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; always consumes two uniforms.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::uint64_t state_ = 0;
};

// FNV-1a 64-bit hash; used by the toy tokenizer and to derive per-purpose
// RNG streams from a base seed plus a label.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Independent stream for (seed, label): seeds a new Rng with seed ^ fnv1a64(label).
inline Rng stream_rng(std::uint64_t seed, std::string_view label) {
    return Rng(seed ^ fnv1a64(label));
}

} // namespace saesteer
