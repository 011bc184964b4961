#pragma once

// Ground-truth crossing-fiber ODFs: uniform fiber axes, symmetric Dirichlet
// volume fractions, and sums of truncated deltas.

#include "fodsplit/random.hpp"
#include "fodsplit/sphcore.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fodsplit {

struct Fiber
{
  Direction direction;
  double fraction = 1.0;
};

/// One to three fibers with fractions on the simplex; directions are stored
/// hemisphere-canonical.
class FiberConfig
{
public:
  FiberConfig() = default;

  explicit FiberConfig(std::vector<Fiber> fibers) : fibers_(std::move(fibers))
  {
    if (fibers_.empty() || fibers_.size() > 3)
      throw std::invalid_argument("a fiber configuration holds 1 to 3 fibers, got " +
                                  std::to_string(fibers_.size()));
    double sum = 0.0;
    for (Fiber& f : fibers_) {
      if (!(f.fraction > 0.0 && f.fraction <= 1.0))
        throw std::invalid_argument("volume fractions must lie in (0, 1]");
      f.direction = f.direction.canonical();
      sum += f.fraction;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("volume fractions must sum to 1 (sum = " + std::to_string(sum) + ")");
  }

  const std::vector<Fiber>& fibers() const { return fibers_; }
  int count() const { return static_cast<int>(fibers_.size()); }

  std::vector<double> fractions() const
  {
    std::vector<double> v;
    for (const Fiber& f : fibers_)
      v.push_back(f.fraction);
    return v;
  }

  /// Smallest pairwise axis angle in degrees (90 for a single fiber).
  double min_separation_deg() const
  {
    double m = 90.0;
    for (std::size_t i = 0; i < fibers_.size(); ++i)
      for (std::size_t j = i + 1; j < fibers_.size(); ++j)
        m = std::min(m, rad2deg(axis_angle(fibers_[i].direction, fibers_[j].direction)));
    return m;
  }

  double min_fraction() const
  {
    double m = 1.0;
    for (const Fiber& f : fibers_)
      m = std::min(m, f.fraction);
    return m;
  }

private:
  std::vector<Fiber> fibers_;
};

struct OdfSample
{
  FiberConfig config;
  ShVector total;
  std::vector<ShVector> components;
};

/// Uniform on the sphere, folded onto the upper hemisphere.
inline Direction sample_uniform_direction(Rng& rng)
{
  const double z = 2.0 * rng.uniform() - 1.0;
  const double phi = 2.0 * kPi * rng.uniform();
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  return Direction(s * std::cos(phi), s * std::sin(phi), z).canonical();
}

/// Symmetric Dirichlet(alpha) draw of `count` fractions. Two fibers use
/// Beta(alpha, alpha) on (v, 1 - v); the last fraction is always 1 minus the
/// others so the sum is 1 to rounding.
inline std::vector<double> sample_volume_fractions(Rng& rng, int count, double alpha = 1.0)
{
  if (count < 1)
    throw std::invalid_argument("fiber count must be at least 1");
  if (!(alpha > 0.0))
    throw std::invalid_argument("Dirichlet concentration must be positive");
  if (count == 1)
    return {1.0};
  for (;;) {
    std::vector<double> g(static_cast<std::size_t>(count));
    for (double& x : g)
      x = rng.gamma(alpha);
    const double total = std::accumulate(g.begin(), g.end(), 0.0);
    if (!(total > 0.0))
      continue;
    std::vector<double> v(g.size());
    double partial = 0.0;
    for (std::size_t i = 0; i + 1 < g.size(); ++i) {
      v[i] = g[i] / total;
      partial += v[i];
    }
    v.back() = 1.0 - partial;
    if (std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0; }))
      return v;
  }
}

inline OdfSample compose_multifiber(const FiberConfig& config, int lmax)
{
  OdfSample s;
  s.config = config;
  s.total = ShVector(lmax);
  for (const Fiber& f : config.fibers()) {
    s.components.push_back(delta_sh(f.direction, lmax) * f.fraction);
    s.total += s.components.back();
  }
  return s;
}

inline FiberConfig random_config(Rng& rng, int count, double alpha = 1.0)
{
  const std::vector<double> v = sample_volume_fractions(rng, count, alpha);
  std::vector<Fiber> fibers;
  for (int i = 0; i < count; ++i)
    fibers.push_back({sample_uniform_direction(rng), v[static_cast<std::size_t>(i)]});
  return FiberConfig(std::move(fibers));
}

/// Two fibers separated by `separation_deg`, the smaller holding
/// `minor_fraction`. The first axis is uniform and the second is placed at a
/// uniform azimuth around it.
inline FiberConfig two_fiber_config(Rng& rng, double separation_deg, double minor_fraction)
{
  if (!(minor_fraction > 0.0 && minor_fraction <= 0.5))
    throw std::invalid_argument("minor fraction must lie in (0, 0.5]");
  const Direction a = sample_uniform_direction(rng);
  const RotationFrame frame = RotationFrame::from_angles(a.theta(), a.phi(), 2.0 * kPi * rng.uniform());
  const Direction b = frame.apply(Direction::from_angles(deg2rad(separation_deg), 0.0));
  return FiberConfig({{a, 1.0 - minor_fraction}, {b, minor_fraction}});
}

struct DatasetSpec
{
  std::uint64_t seed = 0;
  int n_two = 250;
  int n_three = 80;
  int lmax = 6;
  double alpha = 1.0;
};

/// Sample `index` of the dataset draws from Rng(derive_seed(seed, index));
/// the first n_two samples have two fibers, the rest three.
inline std::vector<OdfSample> generate_dataset(const DatasetSpec& spec)
{
  if (spec.n_two < 0 || spec.n_three < 0)
    throw std::invalid_argument("dataset sizes must be non-negative");
  std::vector<OdfSample> out;
  out.reserve(static_cast<std::size_t>(spec.n_two + spec.n_three));
  for (int i = 0; i < spec.n_two + spec.n_three; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    out.push_back(compose_multifiber(random_config(rng, i < spec.n_two ? 2 : 3, spec.alpha), spec.lmax));
  }
  return out;
}

inline std::vector<OdfSample> generate_dataset(std::uint64_t seed, int n_two, int n_three, int lmax)
{
  return generate_dataset(DatasetSpec{seed, n_two, n_three, lmax, 1.0});
}

/// Unbounded stream of training samples; sample i draws its fiber count
/// (2 or 3, or 1..3 with include_single) and configuration from
/// Rng(derive_seed(seed, i)).
class SampleStream
{
public:
  SampleStream(std::uint64_t seed, int lmax, bool include_single = false, double alpha = 1.0)
      : seed_(seed), lmax_(lmax), include_single_(include_single), alpha_(alpha)
  {
    validate_lmax(lmax);
  }

  OdfSample at(std::uint64_t index) const
  {
    Rng rng(derive_seed(seed_, index));
    const int lo = include_single_ ? 1 : 2;
    const int count = lo + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(4 - lo));
    return compose_multifiber(random_config(rng, count, alpha_), lmax_);
  }

  OdfSample next() { return at(cursor_++); }
  std::uint64_t position() const { return cursor_; }

private:
  std::uint64_t seed_;
  int lmax_;
  bool include_single_;
  double alpha_;
  std::uint64_t cursor_ = 0;
};

} // namespace fodsplit
