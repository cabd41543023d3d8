#pragma once

#include <cmath>
#include <vector>

#include "common.h"

namespace dmkv {

// splitmix64: tiny, seedable, identical output on every platform. The
// standard-library engines are not guaranteed bit-stable across
// implementations and traces must be byte-identical, hence hand-rolled.
inline u64 splitmix64(u64& state) {
  u64 z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(u64 seed = 1) : state_(seed) {}
  u64 next() { return splitmix64(state_); }
  // Uniform in [0, n). n == 0 is a caller bug.
  u64 below(u64 n) { return next() % n; }
  double unit() { return double(next() >> 11) * (1.0 / 9007199254740992.0); }

 private:
  u64 state_;
};

// Zipfian sampler over {0..n-1} by CDF inversion on a precomputed table;
// theta = 0 degenerates to uniform.
class Zipf {
 public:
  Zipf(u64 n, double theta) : cdf_(n) {
    double sum = 0;
    for (u64 i = 0; i < n; i++) {
      sum += 1.0 / std::pow(double(i + 1), theta);
      cdf_[i] = sum;
    }
    for (u64 i = 0; i < n; i++) cdf_[i] /= sum;
  }
  u64 sample(Rng& rng) const {
    double u = rng.unit();
    size_t lo = 0, hi = cdf_.size() - 1;
    while (lo < hi) {
      size_t mid = (lo + hi) / 2;
      if (cdf_[mid] < u) lo = mid + 1; else hi = mid;
    }
    return lo;
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace dmkv
