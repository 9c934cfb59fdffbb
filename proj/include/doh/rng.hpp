#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace doh::rng {

/// FNV-1a, for turning ids into stable stream indices.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// SplitMix64 finalizer. Used to derive decorrelated substream seeds from a
/// master seed plus stream indices, so per-patient / per-run results do not
/// depend on scheduling order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t s = splitmix64(master ^ 0xA0761D6478BD642FULL);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ (b + 0xE7037ED1A0B428DBULL));
  return s;
}

inline std::mt19937_64 make_engine(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return std::mt19937_64(derive_seed(master, a, b));
}

// mt19937_64 output is fully specified by the standard; the distributions
// below are hand-rolled so streams are identical on every platform.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

inline int uniform_int(std::mt19937_64& g, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(uniform01(g) * (hi - lo + 1));
}

inline double normal(std::mt19937_64& g) {
  const double u1 = 1.0 - uniform01(g);  // (0, 1]
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Log-normal with median `median` and relative standard deviation `relSd`.
inline double lognormal(std::mt19937_64& g, double median, double relSd) {
  if (relSd <= 0.0) return median;
  const double sigma = std::sqrt(std::log1p(relSd * relSd));
  return median * std::exp(sigma * normal(g));
}

}  // namespace doh::rng
