#pragma once

#include <cstdint>
#include <optional>
#include <random>

namespace cdm {

/// Deterministic random stream. Uniform and normal variates are derived from
/// raw 64-bit engine output, so draws are bit-identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Standard normal (Box-Muller, second variate cached).
  double normal();
  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);

  /// Independent child stream keyed by (seed, stream id). Does not advance
  /// this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace cdm
