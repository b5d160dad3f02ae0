#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace gazesteer {

// Deterministic RNG. All draws go through explicit bit manipulation rather
// than std::uniform_*_distribution, whose output is implementation-defined;
// two builds of this code produce identical streams from identical seeds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // Uniform in [0, 1), 53-bit mantissa.
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free modulo is fine here: n is
  // always tiny relative to 2^64, so the bias is unobservable.
  std::uint64_t below(std::uint64_t n) { return gen_() % n; }

  // Standard normal via Box-Muller on the deterministic uniforms.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stable seed derivation for independent substreams (per video, per tensor...).
// splitmix64 finalizer; good avalanche, cheap, reproducible everywhere.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t base, const std::string& tag);

}  // namespace gazesteer
