#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

namespace sparsecore {

using Rng = std::mt19937_64;

// Independent generator for a named stream of one run. Separate streams
// keep, e.g., data shuffling unaffected by how many architectures get sampled.
enum class Stream : std::uint32_t {
  kInit = 1,
  kShuffle = 2,
  kArchitecture = 3,
  kValidation = 4,
  kHoldout = 5,
  kPlanted = 6,
  kTruth = 7,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

// Uniform double in [0, 1) built from the top 53 bits; unlike
// std::uniform_real_distribution this is identical across standard libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection; n > 0.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

// Fisher-Yates with uniform_index, portable across standard libraries.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = uniform_index(rng, i);
    std::iter_swap(first + (i - 1), first + j);
  }
}

// Standard normal via Box-Muller on uniform01.
inline double standard_normal(Rng& rng) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

}  // namespace sparsecore
