#pragma once

#include <cstdint>
#include <random>

namespace factorstore {

/// Deterministic uniform draws on top of mt19937_64. The mappings avoid
/// std::uniform_*_distribution, whose output is implementation-defined, so a
/// fixed seed yields identical streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1), 53-bit resolution.
  double runif() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double runif(double lo, double hi) { return lo + runif() * (hi - lo); }

  /// Uniform in [0, n); unbiased via rejection of the wrap-around remainder.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace factorstore
