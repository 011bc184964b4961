#pragma once

// Seedable generator with a fully specified output sequence. The standard
// library distributions are implementation-defined, so the few we need are
// written out here on top of mt19937_64, whose sequence is fixed by the
// standard.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>

namespace fodsplit {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z)
{
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Seed for the task with the given index: mix64(mix64(master) + index).
/// Tasks seeded this way can run in any order or on any thread.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index)
{
  return mix64(mix64(master) + index);
}

class Rng
{
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double uniform_open()
  {
    double u;
    do
      u = uniform();
    while (u == 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal (Box-Muller, one value per call).
  double normal()
  {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Gamma(shape, 1) by Marsaglia-Tsang, with the usual boost for shape < 1.
  double gamma(double shape)
  {
    if (!(shape > 0.0))
      throw std::invalid_argument("gamma shape must be positive");
    if (shape == 1.0)
      return -std::log(uniform_open());
    if (shape < 1.0)
      return gamma(shape + 1.0) * std::pow(uniform_open(), 1.0 / shape);
    const double d = shape - 1.0 / 3.0, c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open();
      if (u < 1.0 - 0.0331 * x * x * x * x || std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace fodsplit
