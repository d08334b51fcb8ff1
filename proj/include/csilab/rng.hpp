// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace csilab {

/// Deterministic random stream (xoshiro256** seeded through splitmix64).
///
/// The integer sequence depends only on the seed, so it is identical across
/// platforms and standard libraries. Real-valued draws are built from it
/// directly instead of going through <random> distributions, whose output is
/// implementation-defined.
///
/// Instances are single-owner. Parallel work takes a child stream per task:
/// child seed = splitmix64(parent seed ^ splitmix64(task index + 1)).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Unbiased integer in [0, n). Requires n >= 1.
  std::size_t uniform_index(std::size_t n);
  /// Standard normal via Box-Muller (one value per two uniforms).
  double normal();
  /// Uniformly random permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t seed() const { return seed_; }
  /// Number of 64-bit words drawn so far.
  std::uint64_t position() const { return position_; }

  SeededRng child(std::uint64_t index) const { return SeededRng(derive_seed(seed_, index)); }
  static std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

 private:
  std::uint64_t seed_;
  std::uint64_t position_ = 0;
  std::array<std::uint64_t, 4> state_{};
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace csilab
