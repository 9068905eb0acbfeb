#pragma once
// Counter-based random numbers (Philox4x32-10).
//
// A draw is addressed by (master_seed, stream_id, draw_index): the master seed
// is the Philox key, the stream and draw index form the 128-bit counter. No
// state is carried between draws, so any subset of draws can be produced in
// any order on any thread with identical results.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace uncprop {

struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  friend bool operator==(const SeedSpec&, const SeedSpec&) = default;
};

namespace detail {

inline void mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace detail

using PhiloxBlock = std::array<std::uint32_t, 4>;

/// Philox4x32 with 10 rounds, as published by Salmon et al. (Random123).
inline PhiloxBlock philox4x32(PhiloxBlock ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kW0;
      key[1] += kW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    detail::mulhilo32(kM0, ctr[0], hi0, lo0);
    detail::mulhilo32(kM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

/// Raw 128 random bits for one (seed, stream, index) address.
inline PhiloxBlock random_block(const SeedSpec& seed, std::uint64_t draw_index) {
  const PhiloxBlock ctr{static_cast<std::uint32_t>(draw_index),
                        static_cast<std::uint32_t>(draw_index >> 32),
                        static_cast<std::uint32_t>(seed.stream_id),
                        static_cast<std::uint32_t>(seed.stream_id >> 32)};
  const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed.master_seed),
                                         static_cast<std::uint32_t>(seed.master_seed >> 32)};
  return philox4x32(ctr, key);
}

// Uniform in the open interval (0, 1) from 64 random bits, 52-bit resolution
// (k + 1/2) / 2^52, which never rounds to 0 or 1.
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// Two uniforms in (0, 1) for one address.
inline std::array<double, 2> uniform_pair(const SeedSpec& seed, std::uint64_t draw_index) {
  const auto b = random_block(seed, draw_index);
  return {to_open_unit(b[0], b[1]), to_open_unit(b[2], b[3])};
}

/// Two independent standard normals (Box-Muller) for one address.
inline std::array<double, 2> normal_pair(const SeedSpec& seed, std::uint64_t draw_index) {
  const auto [u1, u2] = uniform_pair(seed, draw_index);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

/// Standard normal for element `i` of a stream; elements 2k and 2k+1 share a block.
inline double standard_normal(const SeedSpec& seed, std::uint64_t i) {
  return normal_pair(seed, i / 2)[i % 2];
}

inline double uniform01(const SeedSpec& seed, std::uint64_t i) {
  return uniform_pair(seed, i / 2)[i % 2];
}

/// SplitMix64 finalizer; used to derive child seeds from structured keys.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives a seed from a parent seed and an ordered list of keys.
template <typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t parent, Keys... keys) {
  std::uint64_t h = mix64(parent);
  ((h = mix64(h ^ static_cast<std::uint64_t>(keys))), ...);
  return h;
}

/// Sequential convenience generator over one stream (satisfies UniformRandomBitGenerator).
class StreamRng {
 public:
  using result_type = std::uint32_t;

  explicit StreamRng(SeedSpec seed) : seed_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return 0xFFFFFFFFu; }

  result_type operator()() {
    if (lane_ == 4) {
      block_ = random_block(seed_, counter_++);
      lane_ = 0;
    }
    return block_[lane_++];
  }

  double uniform() {
    const std::uint32_t hi = (*this)();
    const std::uint32_t lo = (*this)();
    return to_open_unit(hi, lo);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  SeedSpec seed_;
  std::uint64_t counter_ = 0;
  PhiloxBlock block_{};
  int lane_ = 4;
};

}  // namespace uncprop
