#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "sfmk/common.hpp"

namespace sfmk {

// Deterministic RNG used everywhere randomness is needed. Distributions are
// hand-rolled on top of the raw engine so sequences are reproducible across
// standard libraries, not just across runs.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0,1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Integer in [0, n).
  int64_t index(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Knuth sampling, adequate for the small rates used by shot noise.
  int64_t poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    double limit = std::exp(-lambda);
    double p = 1.0;
    int64_t k = 0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  // Derive an independent stream, e.g. one per component or per frame.
  Rng fork(uint64_t salt) {
    uint64_t z = eng_() + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sfmk
