#pragma once

#include <cstdint>
#include <random>

namespace rnlab {

using Rng = std::mt19937_64;

/// Independent stream seed derived from a run seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace streams {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kBatches = 3;
inline constexpr std::uint64_t kDiscriminator = 4;
inline constexpr std::uint64_t kSplit = 5;
inline constexpr std::uint64_t kProbe = 6;
}  // namespace streams

}  // namespace rnlab
