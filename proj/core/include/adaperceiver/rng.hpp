#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace adaperceiver {

// Deterministic RNG with hand-rolled distributions. std:: distributions are
// implementation-defined, which would tie reproducibility to a particular
// libstdc++; the generator below produces the same stream everywhere.
// Core generator is splitmix64 feeding xoshiro256**.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& s : state_) {
      // splitmix64
      x += 0x9e3779b97f4a7c15ULL;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      s = z ^ (z >> 31);
    }
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection-free modulo bias is irrelevant for
  // the small n used here, but keep the rejection loop for exactness.
  uint64_t uniform_int(uint64_t n) {
    const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  template <typename T>
  const T& choice(const std::vector<T>& items) {
    return items[uniform_int(items.size())];
  }

  // Standard normal via Box-Muller (one value per call; cache the pair).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // Normal truncated to +/- 2 sigma, the usual ViT init.
  double truncated_normal(double sigma) {
    double z = normal();
    while (z < -2.0 || z > 2.0) z = normal();
    return z * sigma;
  }

  // Fisher-Yates over indices 0..n-1.
  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(n);
    for (int64_t i = 0; i < n; ++i) p[i] = i;
    for (int64_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<int64_t>(uniform_int(static_cast<uint64_t>(i + 1)));
      std::swap(p[i], p[j]);
    }
    return p;
  }

  // Derive an independent stream, e.g. one per training stage.
  Rng fork(uint64_t stream) const {
    Rng r(state_[0] ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    return r;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t state_[4] = {};
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace adaperceiver
