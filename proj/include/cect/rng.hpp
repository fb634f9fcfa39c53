#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace cect {

/// Deterministic, platform-independent random stream (splitmix64 core).
/// Used everywhere instead of <random> distributions so that identical seeds
/// give bit-identical results across standard-library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller; one fresh pair of uniforms per call.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    uint64_t state_;
};

/// Derives a subsystem seed from a master seed, a purpose label and optional
/// indices (FNV-1a over the label bytes, then mixed with the indices).
/// Stateless, so resumed runs derive identical streams.
inline uint64_t seed_for(uint64_t master, std::string_view purpose,
                         uint64_t index_a = 0, uint64_t index_b = 0) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffULL;
            h *= 0x100000001b3ULL;
        }
    };
    for (char c : purpose) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    mix(master);
    mix(index_a);
    mix(index_b);
    return h;
}

} // namespace cect
