#pragma once

#include <cstdint>
#include <random>

#include "samed/tensor.hpp"

namespace samed {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent sub-seeds from a parent seed.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor random_normal(Shape shape, Rng& rng, double stddev = 1.0);
Tensor random_normal(Shape shape, std::uint64_t seed, double stddev = 1.0);
Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi);

}  // namespace samed
