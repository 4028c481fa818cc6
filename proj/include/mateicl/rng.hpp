#pragma once

#include <array>
#include <cstdint>

namespace mateicl {

/// xoshiro256** seeded through splitmix64. Only integer arithmetic is used to
/// produce the raw stream, so a seed yields the same draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Unbiased integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal via Box-Muller. Relies on libm, so bitwise agreement
  /// across platforms is not guaranteed for this one.
  double normal();

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
};

/// One splitmix64 step; also used to derive child seeds.
std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace mateicl
