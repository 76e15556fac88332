#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace redo {

using Rng = std::mt19937_64;

/// Uniform in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [lo, hi] without modulo bias.
inline int uniform_int(Rng& rng, int lo, int hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t r;
  do r = rng();
  while (r >= limit);
  return lo + static_cast<int>(r % span);
}

/// Standard normal via Box-Muller; consumes exactly two draws per call.
inline double normal(Rng& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Seed for restart `attempt` of a run seeded with `base` (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t attempt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (attempt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace redo
