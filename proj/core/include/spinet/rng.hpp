#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace spinet {

// Platform-independent random streams. std::mt19937_64 is fully specified by
// the standard; the distributions in <random> are not, so the ones we need are
// written out here to keep generated data bit-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derives an independent stream from a base seed and a fixed label.
  static Rng stream(std::uint64_t seed, std::uint64_t label);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection sampled (unbiased).
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; the spare deviate is cached.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

}  // namespace spinet
