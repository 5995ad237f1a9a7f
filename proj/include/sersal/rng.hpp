#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace sersal {

// Counter-based draws: a value depends only on (seed, key, stream), so
// concurrent callers see the same numbers regardless of scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key, std::uint64_t stream = 0) {
  return splitmix64(splitmix64(seed ^ 0x5851F42D4C957F2Dull) ^ splitmix64(key) ^
                    splitmix64(stream * 0xD1B54A32D192ED03ull + 1));
}

// Uniform in (0, 1).
inline double keyed_uniform(std::uint64_t seed, std::uint64_t key, std::uint64_t stream) {
  const std::uint64_t bits = mix_seed(seed, key, stream) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

inline double keyed_normal(std::uint64_t seed, std::uint64_t key, std::uint64_t stream) {
  const double u1 = keyed_uniform(seed, key, 2 * stream + 100);
  const double u2 = keyed_uniform(seed, key, 2 * stream + 101);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace sersal
