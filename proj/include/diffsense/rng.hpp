#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

// Counter-based splittable random streams.
//
// Every draw is a pure function of (stream key, draw position), so any shot of
// any campaign can be reproduced in isolation and results never depend on
// scheduling. Keys are derived hierarchically: master seed -> per-ellipse key
// -> per-shot key, via derive_stream.

namespace diffsense::rng {

inline constexpr std::uint64_t golden_gamma = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer: a bijective 64-bit avalanche mix.
inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

// Child key for sub-stream `index` of the stream identified by `key`.
inline constexpr std::uint64_t derive_stream(std::uint64_t key,
                                             std::uint64_t index) noexcept {
  return mix64(key + (index + 1) * golden_gamma);
}

class Stream {
 public:
  explicit constexpr Stream(std::uint64_t key) noexcept : key_(key) {}

  constexpr std::uint64_t next_u64() noexcept {
    return mix64(key_ + (++counter_) * golden_gamma);
  }

  // uniform on [0,1), 53 bits
  double next_unit() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform on (0,1], safe as a log argument
  double next_unit_pos() noexcept {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // uniform on [0, 2*pi)
  double next_angle() noexcept {
    return next_unit() * (2.0 * std::numbers::pi);
  }

  // standard normal via Box-Muller; always consumes exactly two draws
  double next_normal() noexcept {
    const double r = std::sqrt(-2.0 * std::log(next_unit_pos()));
    return r * std::cos(2.0 * std::numbers::pi * next_unit());
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace diffsense::rng
