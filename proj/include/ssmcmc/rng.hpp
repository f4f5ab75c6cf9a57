#pragma once

#include <cstdint>
#include <random>

namespace ssmcmc {

using Rng = std::mt19937_64;

/// Purposes that get their own random stream within a run.
enum class StreamPurpose : std::uint64_t {
  kScenario = 1,
  kStandardChain = 2,
  kAdaptiveChain = 3,
  kSubsample = 4,
  kInitialCloud = 5,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent engine for (master seed, run index, purpose).
/// The key is hashed counter-style so neighbouring seeds do not produce
/// correlated engine states.
inline Rng make_stream(std::uint64_t master_seed, std::uint64_t run_index, StreamPurpose purpose) {
  std::uint64_t h = splitmix64(master_seed);
  h = splitmix64(h ^ run_index);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

/// Uniform draw on the open interval (0, 1).
template <class Engine>
double open_unit(Engine& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  while (u <= 0.0) u = unif(rng);
  return u;
}

}  // namespace ssmcmc
