#pragma once

#include <cstdint>
#include <span>

namespace framegen {

/// Counter-based generator.
///
/// Output k of a stream is `mix(key + (k + 1) * 0x9E3779B97F4A7C15)` where
/// `key = mix(seed ^ 0x6A09E667F3BCC909)` and `mix` is the SplitMix64
/// finalizer. The state is just (seed, counter), so any position in a stream
/// can be reproduced without replaying it. Uniforms take the top 53 bits;
/// Gaussians use the cosine branch of Box-Muller on two consecutive uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t counter = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  double uniform();            // [0, 1)
  double normal();             // N(0, 1)
  std::uint64_t below(std::uint64_t n);  // uniform integer in [0, n)
  void fill_normal(std::span<double> out, double stddev = 1.0);

  // Independent stream keyed by (seed, tag); does not advance this one.
  Rng fork(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

}  // namespace framegen
