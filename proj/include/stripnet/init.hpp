#pragma once

#include <cstdint>
#include <random>

#include "stripnet/tensor.hpp"

namespace stripnet {

// Stable stream derivation so sub-components get independent seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ull + 0x12345));
}

// Truncated normal: resample outside two standard deviations.
inline void fill_trunc_normal(Tensor& t, std::mt19937_64& rng, double stddev = 0.02) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data) {
    double z;
    do {
      z = dist(rng);
    } while (std::fabs(z) > 2.0 * stddev);
    v = z;
  }
}

}  // namespace stripnet
