#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

namespace pev {

namespace detail {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Folds a string tag and integer parts into a new 64-bit stream id.
/// Every random stream in a run is derived from the master seed through
/// this function, so runs are replayable from the config alone.
template <class... Parts>
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                    Parts... parts) noexcept {
  std::uint64_t h = detail::mix64(base ^ detail::fnv1a(tag));
  ((h = detail::mix64(h ^ (static_cast<std::uint64_t>(parts) +
                           0x9e3779b97f4a7c15ULL))),
   ...);
  return h;
}

/// Tag-free variant for deriving sub-streams from an already-derived seed.
template <class... Parts>
constexpr std::uint64_t derive_sub(std::uint64_t base, Parts... parts) noexcept {
  std::uint64_t h = base;
  ((h = detail::mix64(h ^ (static_cast<std::uint64_t>(parts) +
                           0x9e3779b97f4a7c15ULL))),
   ...);
  return h;
}

/// Deterministic random stream (splitmix64). Integer output is bit-stable
/// across platforms; the floating-point paths use plain IEEE-754 arithmetic
/// so repeated runs on one machine are bit-identical. std distributions are
/// deliberately avoided: their output is implementation-defined.
class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return detail::mix64(state_);
  }

  /// Uniform in [0, 1), 53 random bits.
  double next_unit() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller. Two uniforms per draw, no cached
  /// spare, so a draw's value depends only on the stream position.
  double next_gaussian() noexcept {
    double u1 = next_unit();
    while (u1 == 0.0) u1 = next_unit();
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Unbiased integer in [0, n); n must be positive.
  std::uint64_t next_below(std::uint64_t n) noexcept {
    const std::uint64_t zone = UINT64_MAX - UINT64_MAX % n;
    for (;;) {
      const std::uint64_t v = next_u64();
      if (v < zone) return v % n;
    }
  }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(next_below(i))]);
    }
  }

  /// Gamma(shape, 1) via Marsaglia-Tsang; shape > 0.
  double next_gamma(double shape) noexcept {
    if (shape < 1.0) {
      const double boost = std::pow(1.0 - next_unit(), 1.0 / shape);
      return next_gamma(shape + 1.0) * boost;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = 0.0;
      double v = 0.0;
      do {
        x = next_gaussian();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = next_unit();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace pev
