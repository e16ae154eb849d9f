#pragma once

#include <cstdint>
#include <random>

namespace gqst {

/// splitmix64 finalizer. Per-item seeds are derived as
/// mix64(base_seed + GOLDEN * (index + 1)), which makes generation
/// independent of evaluation order.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return mix64(base + 0x9E3779B97F4A7C15ULL * (index + 1));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(mix64(seed));
}

}  // namespace gqst
