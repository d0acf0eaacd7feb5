#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sfde {

/// Seeded generator with portable uniform/normal draws. std::*_distribution
/// output is implementation-defined, so the conversions are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0x5fde) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Normal truncated to [-2 std, 2 std] by rejection.
  double truncated_normal(double std) {
    for (;;) {
      const double z = normal();
      if (std::abs(z) <= 2.0) return z * std;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Derives an independent stream; used to hand sub-components their own generator.
  Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sfde
