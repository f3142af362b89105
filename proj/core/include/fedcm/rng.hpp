#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedcm {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Seed splitting rule: start from splitmix64(root) and fold every path
/// component in with h = splitmix64(h ^ (component + 0x9e3779b97f4a7c15)).
/// Replicate r of grid point g uses derive_seed(root, {g, r}).
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path);

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Uniform double in [0, 1) from the top 53 bits of one engine call.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace fedcm
