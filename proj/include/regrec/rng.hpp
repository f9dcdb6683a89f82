#pragma once

#include <array>
#include <cstdint>

namespace regrec {

/// xoshiro256** seeded through splitmix64. Part of the weight-file contract:
/// every seeded tensor in this library is drawn from this generator, so the
/// exact bit stream is fixed.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      x += 0x9E3779B97F4A7C15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      word = z ^ (z >> 31);
    }
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 24 bits of resolution (exact in float).
  float uniform01() { return static_cast<float>(next() >> 40) * 0x1.0p-24f; }

  /// Uniform in [-a, a): a * (2u - 1), computed in double then rounded.
  float symmetric(double a) {
    const double u = static_cast<double>(next() >> 40) * 0x1.0p-24;
    return static_cast<float>(a * (2.0 * u - 1.0));
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  // UniformRandomBitGenerator surface so <algorithm> shuffles accept it.
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next(); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace regrec
