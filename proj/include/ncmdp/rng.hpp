#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace ncmdp {

/// Random stream owned by a single run. Never shared between runs.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds from a
/// master seed and a counter.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of stream number `counter` under `master`.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) {
  return splitmix64(splitmix64(master) ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
}

inline Rng make_stream(std::uint64_t master, std::uint64_t counter) {
  return Rng(derive_seed(master, counter));
}

/// Uniform double in [0, 1) built from the top 53 bits. Used instead of
/// std::uniform_real_distribution so that streams are reproducible across
/// standard library implementations.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Inverse-CDF draw from a probability vector. Falls back to the last
/// index with positive mass when rounding leaves `u` past the total.
inline int sample_index(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

}  // namespace ncmdp
