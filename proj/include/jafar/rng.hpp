#pragma once

#include <cstdint>

namespace jafar {

/// splitmix64 stream. Uniforms use the top 53 bits; normals use Box-Muller
/// and cache the second variate of each pair.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace jafar
