#pragma once

#include <cmath>
#include <cstdint>

namespace samst {

// Counter-based generator. The n-th draw of a stream is a pure function of
// (key, n), so streams can be split and replayed in any language:
//
//   mix(z):  z += 0x9E3779B97F4A7C15
//            z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//            z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//            return z ^ (z >> 31)
//   draw(n)  = mix(key ^ mix(n))
//   split(s) = CounterRng{ mix(key ^ mix(s ^ 0xA5A5A5A5A5A5A5A5)) }
//   uniform  = (draw >> 11) * 2^-53
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t seed = 0) noexcept : key_(mix(seed)) {}

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  constexpr std::uint64_t at(std::uint64_t n) const noexcept { return mix(key_ ^ mix(n)); }

  std::uint64_t next_u64() noexcept { return at(counter_++); }

  // Uniform double in [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Uses rejection so the result is exactly uniform.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Standard normal via Box-Muller (consumes two draws).
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  constexpr CounterRng split(std::uint64_t stream) const noexcept {
    CounterRng child;
    child.key_ = mix(key_ ^ mix(stream ^ 0xA5A5A5A5A5A5A5A5ULL));
    return child;
  }

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace samst
