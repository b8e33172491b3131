#pragma once

#include <cstdint>

namespace mtrans {

// xoshiro256++ seeded through splitmix64. All randomness in the project
// (weight init, masks, phantoms, batch order) flows through this generator
// so runs reproduce bit-exactly across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Box-Muller; one fresh pair per call, second value discarded so the
  // stream position is independent of call history.
  double normal(double mean = 0.0, double stddev = 1.0);

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
  uint64_t state_[4];
};

// Deterministic sub-seed for a named stream, so one --seed fans out to
// independent generators (data, init, masks, batch order, ...).
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
  uint64_t x = master ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
  return Rng::splitmix64(x);
}

}  // namespace mtrans
