#pragma once

// Counter-based pseudo-random generation. Every stochastic operation in the
// library takes an explicit 64-bit seed; there is no global generator state.
//
// The generator is SplitMix64 used in counter mode: the i-th output is
// finalize(mix64(seed) + i * GOLDEN). Substreams are derived by hashing a
// (seed, key) pair, which gives O(1) jump-ahead and makes parallel replication
// schedules reproducible regardless of execution order.

#include <cmath>
#include <cstdint>
#include <limits>

namespace eivsc::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer (Steele, Lea, Flood constants).
inline std::uint64_t mix64(std::uint64_t z) {
  z += kGolden;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Deterministic substream seed for a keyed child stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) {
  return mix64(seed ^ mix64(key + kGolden));
}

// Replication seed schedule used by the simulation lab:
// seed(grid g, rep r) = base ^ mix64(g * GOLDEN + mix64(r)).
inline std::uint64_t replication_seed(std::uint64_t base, std::uint64_t grid_index,
                                      std::uint64_t rep_index) {
  return base ^ mix64(grid_index * kGolden + mix64(rep_index));
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : state_(mix64(seed)) {}

  std::uint64_t next_u64() {
    state_ += kGolden;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform on (0, 1), never exactly 0 or 1.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the paired draw is cached.
  double next_gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Rademacher sign.
  double next_sign() { return (next_u64() & 1ULL) ? 1.0 : -1.0; }

  // Uniform integer in [0, bound) by rejection, bias-free.
  std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % bound;
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace eivsc::rng
