// rng.hpp — deterministic random streams.
//
// All randomness in the project flows through RngStream so that results do
// not depend on libstdc++ distribution internals. Streams are derived from
// user seeds via splitmix64, and substreams fork without correlation.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace mlab {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Mix two 64-bit values into a fresh seed (for substream derivation).
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2));
  splitmix64(s);
  return splitmix64(s);
}

// xoshiro256** seeded via splitmix64.
class RngStream {
 public:
  explicit RngStream(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
    have_gauss_ = false;
  }

  RngStream fork(uint64_t tag) const {
    return RngStream(mix_seed(s_[0] ^ s_[2], tag));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + int(uniform_int(uint64_t(hi_inclusive - lo + 1)));
  }

  // Standard normal via Box-Muller (pair cached).
  double gauss() {
    if (have_gauss_) {
      have_gauss_ = false;
      return cached_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_gauss_ = true;
    return r * std::cos(a);
  }

  double gauss(double mean, double stddev) { return mean + stddev * gauss(); }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(uint64_t(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices out of [0, n), order randomized.
  std::vector<int> sample_indices(int n, int k) {
    std::vector<int> idx(size_t(n), 0);
    for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + int(uniform_int(uint64_t(n - i)));
      std::swap(idx[size_t(i)], idx[size_t(j)]);
    }
    idx.resize(size_t(k));
    return idx;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
  bool have_gauss_ = false;
  double cached_ = 0.0;
};

}  // namespace mlab
