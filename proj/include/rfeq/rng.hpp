#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rfeq {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Seed for an independent stream addressed by (seed, path...); same inputs, same stream,
// whatever thread evaluates it.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t state = seed;
    std::uint64_t out = splitmix64(state);
    for (std::uint64_t p : path) {
        state ^= out + p * 0xD1B54A32D192ED03ULL;
        out = splitmix64(state);
    }
    return out;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double normal() { return normal_(engine_); }
    double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace rfeq
