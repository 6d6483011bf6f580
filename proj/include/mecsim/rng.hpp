#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mecsim {

// Distinct substream identifiers. All randomness in an episode flows through
// substreams derived from (seed, StreamId), so replays are exact.
enum class StreamId : std::uint64_t {
  topology = 1,
  arrivals = 2,
  fading = 3,
  exploration = 4,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based seed derivation: episode i is reproducible in isolation.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x51ED270B7A14C5ULL));
}

// Thin wrapper over mt19937_64 that avoids std::*_distribution, whose output
// is not specified bit-exactly across standard library implementations.
class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng(std::uint64_t seed, StreamId stream)
      : engine_(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(stream))) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return std::ldexp(static_cast<double>(engine_() >> 11), -53); }

  // Uniform in (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection sampling for an unbiased draw.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Unit-mean exponential (Rayleigh power fading factor).
  double exponential() { return -std::log(1.0 - uniform()); }

  // Knuth's inversion-by-multiplication Poisson sampler. Exact and
  // platform-independent for the moderate rates used here.
  std::uint64_t poisson(double rate) {
    if (rate <= 0.0) return 0;
    const double threshold = std::exp(-rate);
    std::uint64_t k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform_open();
    } while (p > threshold);
    return k - 1;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mecsim
