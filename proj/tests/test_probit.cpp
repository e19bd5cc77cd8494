#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "ckf/probit.hpp"
#include "ckf/synth.hpp"

namespace ckf {
namespace {

TEST(BuildPartition, BinaryHasSingleBoundaryAtZero) {
  const Partition p = build_partition(2, 1.0);
  ASSERT_EQ(p.boundaries().size(), 1u);
  EXPECT_DOUBLE_EQ(p.boundaries()[0], 0.0);
  EXPECT_EQ(p.num_classes(), 2);
}

TEST(BuildPartition, FiveClassesCenteredWithSigmaWidth) {
  const double sigma = 1.76;
  const Partition p = build_partition(5, sigma);
  const double expected[] = {-1.5 * sigma, -0.5 * sigma, 0.5 * sigma, 1.5 * sigma};
  ASSERT_EQ(p.boundaries().size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p.boundaries()[i], expected[i], 1e-15);
  for (int k = 2; k <= 4; ++k) EXPECT_NEAR(p.upper({k}) - p.lower({k}), sigma, 1e-15);
  EXPECT_EQ(p.lower({1}), -kInf);
  EXPECT_EQ(p.upper({5}), kInf);
}

TEST(BuildPartition, RejectsBadArguments) {
  EXPECT_THROW(build_partition(1, 1.0), ConfigError);
  EXPECT_THROW(build_partition(5, 0.0), ConfigError);
  EXPECT_THROW(build_partition(5, -1.0), ConfigError);
  EXPECT_THROW(Partition({1.0, 0.0}, {1, 2, 3}), ConfigError);
  EXPECT_THROW(Partition({0.0}, {2, 1}), ConfigError);
}

TEST(ClassOf, BoundaryValueBelongsToLowerClass) {
  const Partition p = build_partition(5, 1.0);
  EXPECT_EQ(class_of(p, -1e300).k, 1);
  EXPECT_EQ(class_of(p, 0.4).k, 3);
  for (int k = 1; k <= 4; ++k) EXPECT_EQ(class_of(p, p.boundaries()[k - 1]).k, k);
  EXPECT_EQ(class_of(p, 1e300).k, 5);
}

TEST(ClassOf, LabelLookupToleratesOnlyRounding) {
  std::vector<double> labels;
  for (int k = 1; k <= 10; ++k) labels.push_back(0.5 * k);
  const Partition p = build_partition(10, 0.88, labels);
  EXPECT_EQ(p.class_for_label(3.5)->k, 7);
  EXPECT_EQ(p.class_for_label(3.5 + 1e-12)->k, 7);
  EXPECT_FALSE(p.class_for_label(3.7).has_value());
}

TEST(TruncNormMean, ClosedFormCases) {
  EXPECT_NEAR(trunc_norm_mean(0.0, 1.0, -1.0, 1.0), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(trunc_norm_mean(0.3, 2.0, -kInf, kInf), 0.3);
  // sqrt(2/pi): the half-normal mean.
  EXPECT_NEAR(trunc_norm_mean(0.0, 1.0, 0.0, kInf), 0.7978845608028654, 1e-14);
  EXPECT_NEAR(trunc_norm_mean(0.0, 1.0, -kInf, 0.0), -0.7978845608028654, 1e-14);
}

TEST(TruncNormMean, FarTailsStayFiniteAndInside) {
  // Both bounds 30-40 standard deviations out: naive phi / dPhi is 0/0.
  const double m = trunc_norm_mean(0.0, 1.0, 30.0, 40.0);
  EXPECT_TRUE(std::isfinite(m));
  EXPECT_GT(m, 30.0);
  EXPECT_LT(m, 30.1);
  // Upper tail of a half-infinite cell: mean ~ a + 1/a.
  EXPECT_NEAR(trunc_norm_mean(0.0, 1.0, 50.0, kInf), 50.0 + 1.0 / 50.0, 1e-4);
  EXPECT_NEAR(trunc_norm_mean(0.0, 1.0, -kInf, -50.0), -50.0 - 1.0 / 50.0, 1e-4);
  const double narrow = trunc_norm_mean(0.0, 1.0, 3.0, 3.0 + 1e-9);
  EXPECT_GE(narrow, 3.0);
  EXPECT_LE(narrow, 3.0 + 1e-9);
}

TEST(TruncNormMean, MatchesQuadratureOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 300; ++i) {
    const double center = 6.0 * unit(rng) - 3.0;
    const double sigma = 0.2 + 2.0 * unit(rng);
    double a = 16.0 * unit(rng) - 8.0;
    double b = 16.0 * unit(rng) - 8.0;
    if (a > b) std::swap(a, b);
    if (b - a < 1e-3) b = a + 1e-3;
    const int kind = i % 3;
    const double l = kind == 1 ? -kInf : center + sigma * a;
    const double r = kind == 2 ? kInf : center + sigma * b;
    const double got = trunc_norm_mean(center, sigma, l, r);
    const double want = quad_trunc_moment(center, sigma, l, r, 1);
    worst = std::max(worst, std::abs(got - want));
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(TruncNormMean, MonotoneInCenter) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double l = -3.0 + 2.0 * unit(rng);
    const double r = l + 0.1 + 3.0 * unit(rng);
    double prev = -kInf;
    for (double c = -12.0; c <= 12.0; c += 0.05) {
      const double m = trunc_norm_mean(c, 1.0, l, r);
      ASSERT_GE(m, prev - 1e-12) << "l=" << l << " r=" << r << " c=" << c;
      prev = m;
    }
  }
}

TEST(ClassProb, SymmetricBinaryAndBoundaryMass) {
  const Partition bin = build_partition(2, 1.0);
  EXPECT_NEAR(class_prob(0.0, 1.0, bin, {1}), 0.5, 1e-15);
  EXPECT_NEAR(class_prob(0.0, 1.0, bin, {2}), 0.5, 1e-15);

  const double sigma = 1.76;
  const Partition p = build_partition(5, sigma);
  const double at = p.boundaries()[1];  // b_2
  EXPECT_NEAR(class_prob(at, sigma, p, {1}) + class_prob(at, sigma, p, {2}), 0.5, 1e-15);
}

TEST(ClassProb, Telescopes) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const int m = 2 + static_cast<int>(9 * unit(rng));
    const Partition p = build_partition(m, 0.2 + unit(rng));
    const double mean = 20.0 * unit(rng) - 10.0;
    const double sigma = 0.1 + 2.0 * unit(rng);
    double total = 0.0;
    for (int k = 1; k <= m; ++k) total += class_prob(mean, sigma, p, {k});
    ASSERT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(LogIntervalMass, TailsAgreeWithDirectEvaluation) {
  EXPECT_NEAR(log_interval_mass(1.0, 2.0), std::log(normal_cdf(2.0) - normal_cdf(1.0)), 1e-13);
  EXPECT_NEAR(log_interval_mass(-2.0, -1.0), std::log(normal_cdf(-1.0) - normal_cdf(-2.0)), 1e-13);
  EXPECT_NEAR(log_interval_mass(-kInf, kInf), 0.0, 1e-15);
  // ln Q(40) ~ -x^2/2 - ln(x sqrt(2 pi)).
  const double x = 40.0;
  EXPECT_NEAR(log_interval_mass(x, kInf), -0.5 * x * x - std::log(x * std::sqrt(2 * std::numbers::pi)), 1e-3);
}

}  // namespace
}  // namespace ckf
