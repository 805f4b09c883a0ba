#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>

namespace fcns {

// Seeded random stream. Distributions are implemented here on top of the raw
// mt19937_64 output because the standard distribution objects are not
// bit-reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal deviate (Box-Muller).
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes a base seed with a stream id (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// 64-bit FNV-1a of a string, used to seed per-reader orderings.
std::uint64_t hash_seed(std::string_view text);

}  // namespace fcns
