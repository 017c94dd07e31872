#pragma once

#include <cstdint>
#include <cmath>

namespace cinet {

// State expansion used to derive full generator state from one 64-bit seed,
// and to derive independent per-item seeds from (master seed, index).
struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
};

inline uint64_t derive_seed(uint64_t master, uint64_t index) {
  SplitMix64 mix(master ^ (0x632be59bd9b4e019ull + index * 0x9e3779b97f4a7c15ull));
  mix.next();
  return mix.next();
}

// xoshiro256++ with splitmix64 seeding. All randomized behaviour in the
// library draws from this generator so runs are reproducible bit for bit.
class Xoshiro256pp {
 public:
  explicit Xoshiro256pp(uint64_t seed) {
    SplitMix64 mix(seed);
    for (auto& word : s_) word = mix.next();
    has_spare_ = false;
    spare_ = 0.0;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  uint64_t next_below(uint64_t n) {
    // Lemire multiply-shift; slight bias is irrelevant here and the
    // sequence stays platform independent.
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
    return static_cast<uint64_t>(m >> 64);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller; caches the second deviate.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
  bool has_spare_;
  double spare_;
};

}  // namespace cinet
