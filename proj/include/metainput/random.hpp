#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "metainput/checksum.hpp"

namespace metainput {

using Rng = std::mt19937_64;

// Derives an independent seed from a base seed and a label, e.g. the
// coordinates of a harness grid cell.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  Fnv1a h;
  h.update_u64(seed);
  h.update(label.data(), label.size());
  return h.digest();
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  Fnv1a h;
  h.update_u64(seed);
  h.update_u64(index);
  return h.digest();
}

// Fisher-Yates driven by raw mt19937_64 output, so index permutations do not
// depend on the standard library's distribution implementations.
template <class Container>
void shuffle_in_place(Container& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Box-Muller; one fresh pair of uniforms per sample.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace metainput
