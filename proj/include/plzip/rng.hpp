#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace plzip {

//! Counter-based 64-bit generator (SplitMix64). Each stream is fully
//! determined by its seed, so replications can be generated in any order
//! (or concurrently) without changing the draws.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  //! Derive an independent stream from a base seed and stream tags.
  //! Used as: Rng(Rng::stream(base_seed, scheme_index, replication)).
  static uint64_t stream(uint64_t base, uint64_t tag1, uint64_t tag2 = 0) {
    uint64_t s = mix(base + 0x9e3779b97f4a7c15ULL * (tag1 + 1));
    return mix(s + 0x9e3779b97f4a7c15ULL * (tag2 + 1));
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  //! Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  //! Standard normal (Box-Muller, no state cached).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  //! Poisson draw by sequential inversion; large means are split so the
  //! CDF search stays short and e^{-lambda} representable.
  long poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    long total = 0;
    while (lambda > 500.0) {
      total += poisson_inv(500.0);
      lambda -= 500.0;
    }
    return total + poisson_inv(lambda);
  }

  //! Partial Fisher-Yates: first k entries of a random permutation of 0..n-1.
  template <typename IntVec>
  void choose(long n, long k, IntVec& out) {
    std::vector<long> idx(n);
    for (long i = 0; i < n; ++i) idx[i] = i;
    out.resize(k);
    for (long i = 0; i < k; ++i) {
      long j = i + static_cast<long>(next_u64() % static_cast<uint64_t>(n - i));
      std::swap(idx[i], idx[j]);
      out[i] = idx[i];
    }
  }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  long poisson_inv(double lambda) {
    double p = std::exp(-lambda);
    double cdf = p;
    double u = uniform();
    long k = 0;
    while (u > cdf) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
      if (k > 2000) break;  // cdf numerically 1 long before this
    }
    return k;
  }

  uint64_t state_;
};

}  // namespace plzip
