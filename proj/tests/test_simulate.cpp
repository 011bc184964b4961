#include "fodsplit/mesh.hpp"
#include "fodsplit/simulate.hpp"

#include <gtest/gtest.h>

using namespace fodsplit;

TEST(SampleUniformDirection, UnitCanonicalAndUniform)
{
  Rng rng(2024);
  constexpr int n = 100000, bins = 36;
  double mean_abs_z = 0.0;
  std::vector<int> hist(bins, 0);
  for (int i = 0; i < n; ++i) {
    const Direction d = sample_uniform_direction(rng);
    ASSERT_NEAR(d.vec().norm(), 1.0, 1e-12);
    ASSERT_GE(d.z(), 0.0);
    mean_abs_z += std::abs(d.z()) / n;
    ++hist[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(d.phi() / (2.0 * kPi) * bins)))];
  }
  EXPECT_NEAR(mean_abs_z, 0.5, 0.01);
  double chi2 = 0.0;
  const double expected = static_cast<double>(n) / bins;
  for (int h : hist)
    chi2 += (h - expected) * (h - expected) / expected;
  // 35 degrees of freedom, p = 0.001 critical value
  EXPECT_LT(chi2, 66.62);
}

TEST(SampleVolumeFractions, SingleFiber)
{
  Rng rng(1);
  EXPECT_EQ(sample_volume_fractions(rng, 1, 1.0), std::vector<double>{1.0});
  EXPECT_THROW(sample_volume_fractions(rng, 0, 1.0), std::invalid_argument);
  EXPECT_THROW(sample_volume_fractions(rng, 2, 0.0), std::invalid_argument);
}

TEST(SampleVolumeFractions, TwoFibersUniformFirstFraction)
{
  Rng rng(17);
  constexpr int n = 100000;
  double mean = 0.0, below_quarter = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto v = sample_volume_fractions(rng, 2, 1.0);
    ASSERT_EQ(v.size(), 2u);
    ASSERT_GT(v[0], 0.0);
    ASSERT_GT(v[1], 0.0);
    ASSERT_NEAR(v[0] + v[1], 1.0, 2e-16);
    mean += v[0] / n;
    below_quarter += (v[0] < 0.25) / static_cast<double>(n);
  }
  EXPECT_NEAR(mean, 0.5, 0.01);
  EXPECT_NEAR(below_quarter, 0.25, 0.01);
}

TEST(SampleVolumeFractions, ThreeFiberMarginals)
{
  for (double alpha : {1.0, 2.5, 0.5}) {
    Rng rng(99);
    constexpr int n = 100000;
    std::array<double, 3> mean{}, sq{};
    for (int i = 0; i < n; ++i) {
      const auto v = sample_volume_fractions(rng, 3, alpha);
      ASSERT_NEAR(v[0] + v[1] + v[2], 1.0, 4e-16);
      for (int k = 0; k < 3; ++k) {
        ASSERT_GT(v[static_cast<std::size_t>(k)], 0.0);
        mean[static_cast<std::size_t>(k)] += v[static_cast<std::size_t>(k)] / n;
        sq[static_cast<std::size_t>(k)] += v[static_cast<std::size_t>(k)] * v[static_cast<std::size_t>(k)] / n;
      }
    }
    // symmetric Dirichlet: mean 1/3, variance (1/3)(2/3)/(3 alpha + 1)
    const double var = (1.0 / 3.0) * (2.0 / 3.0) / (3.0 * alpha + 1.0);
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(mean[static_cast<std::size_t>(k)], 1.0 / 3.0, 0.01) << "alpha " << alpha;
      EXPECT_NEAR(sq[static_cast<std::size_t>(k)] - mean[static_cast<std::size_t>(k)] * mean[static_cast<std::size_t>(k)], var, 0.1 * var);
    }
  }
}

TEST(ComposeMultifiber, SingleFiber)
{
  const OdfSample s = compose_multifiber(FiberConfig({{Direction::z_axis(), 1.0}}), 6);
  EXPECT_EQ(s.total, delta_sh(Direction::z_axis(), 6));
  ASSERT_EQ(s.components.size(), 1u);
}

TEST(ComposeMultifiber, MassAndSymmetry)
{
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const OdfSample s = compose_multifiber(random_config(rng, 1 + t % 3), 6);
    EXPECT_NEAR(s.total[0], 1.0 / std::sqrt(4.0 * kPi), 1e-15);
    EXPECT_NEAR(s.total[0], 0.282095, 1e-6);
    ShVector sum(6);
    for (std::size_t i = 0; i < s.components.size(); ++i) {
      sum += s.components[i];
      const Fiber& f = s.config.fibers()[i];
      EXPECT_LT((s.components[i].coeffs() - f.fraction * delta_sh(f.direction, 6).coeffs()).cwiseAbs().maxCoeff(), 1e-15);
    }
    EXPECT_LT((sum.coeffs() - s.total.coeffs()).cwiseAbs().maxCoeff(), 1e-12);
  }
  const OdfSample zx = compose_multifiber(FiberConfig({{Direction::z_axis(), 0.5}, {Direction::x_axis(), 0.5}}), 6);
  EXPECT_NEAR(eval_sh(zx.total, Direction::z_axis()), eval_sh(zx.total, Direction::x_axis()), 1e-10);
}

TEST(FiberConfig, RejectsOffSimplexFractions)
{
  EXPECT_THROW(FiberConfig({{Direction::z_axis(), 0.5}, {Direction::x_axis(), 0.6}}), std::invalid_argument);
  EXPECT_THROW(FiberConfig({{Direction::z_axis(), 0.5}}), std::invalid_argument);
  EXPECT_THROW(FiberConfig({{Direction::z_axis(), 1.2}, {Direction::x_axis(), -0.2}}), std::invalid_argument);
  EXPECT_THROW(FiberConfig(std::vector<Fiber>{}), std::invalid_argument);
  const FiberConfig c({{Direction(0, 0, -1), 1.0}});
  EXPECT_EQ(c.fibers()[0].direction, Direction::z_axis());
}

TEST(TwoFiberConfig, SeparationAndFractions)
{
  Rng rng(6);
  for (double sep : {10.0, 30.0, 60.0, 89.0}) {
    const FiberConfig c = two_fiber_config(rng, sep, 0.25);
    EXPECT_NEAR(c.min_separation_deg(), sep, 1e-9);
    EXPECT_NEAR(c.min_fraction(), 0.25, 1e-15);
  }
}

TEST(GenerateDataset, DeterministicAndSized)
{
  const auto a = generate_dataset(7, 250, 80, 6);
  const auto b = generate_dataset(7, 250, 80, 6);
  ASSERT_EQ(a.size(), 330u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].total, b[i].total);
    EXPECT_EQ(a[i].config.count(), i < 250 ? 2 : 3);
  }
  const auto c = generate_dataset(8, 250, 80, 6);
  EXPECT_FALSE(a[0].total == c[0].total);
  // prefix stability: a shorter set is a prefix of the two-fiber block
  const auto d = generate_dataset(7, 10, 0, 6);
  for (std::size_t i = 0; i < d.size(); ++i)
    EXPECT_EQ(d[i].total, a[i].total);
}

TEST(SampleStream, ReproducibleAndCountMix)
{
  SampleStream s1(5, 6), s2(5, 6);
  std::array<int, 4> counts{};
  for (int i = 0; i < 2000; ++i) {
    const OdfSample a = s1.next(), b = s2.next();
    ASSERT_EQ(a.total, b.total);
    ++counts[static_cast<std::size_t>(a.config.count())];
  }
  EXPECT_EQ(counts[1], 0);
  EXPECT_NEAR(counts[2] / 2000.0, 0.5, 0.05);
  SampleStream with_single(5, 6, true);
  int singles = 0;
  for (int i = 0; i < 3000; ++i)
    singles += with_single.next().config.count() == 1;
  EXPECT_NEAR(singles / 3000.0, 1.0 / 3.0, 0.05);
}

// Truncation ringing of two overlapping lmax-6 deltas forms maxima at
// 12-20% of the global max (measured over 2000 draws), so the count is taken
// above that level.
TEST(SimulateToMesh, WellSeparatedPairsHaveTwoPeaks)
{
  const auto mesh = build_mesh(384);
  Rng rng(12);
  int checked = 0;
  while (checked < 200) {
    const FiberConfig c = random_config(rng, 2);
    if (c.min_separation_deg() <= 60.0 || c.min_fraction() < 0.3)
      continue;
    ++checked;
    const auto peaks = local_maxima(sample_to_mesh(compose_multifiber(c, 6).total, mesh), {0.25, 15.0});
    EXPECT_EQ(peaks.size(), 2u) << "sep " << c.min_separation_deg() << " frac " << c.min_fraction();
  }
}
