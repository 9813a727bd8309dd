#include "sfl/environment.hpp"
#include "sfl/hamiltonian.hpp"
#include "sfl/schedule.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace sfl;

namespace {

GaussianEnvironment zero_env(std::size_t n, std::size_t m, std::size_t r) {
  GaussianEnvironment env;
  env.G = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  env.u4.assign(r + 2, 0.0);
  env.u2.assign(r + 2, Vector::Zero(static_cast<Eigen::Index>(m)));
  env.h.assign(r + 2, Vector::Zero(static_cast<Eigen::Index>(n)));
  return env;
}

ConfigurationSets random_sets(std::uint64_t seed, std::size_t lx, std::size_t ly, std::size_t n, std::size_t m) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g;
  Matrix x(lx, n), y(ly, m);
  for (auto i = 0; i < x.size(); ++i) x.data()[i] = g(gen);
  for (auto i = 0; i < y.size(); ++i) y.data()[i] = g(gen);
  return ConfigurationSets::build(x, y);
}

}  // namespace

TEST(Environment, DeterministicPerSeedAndIndex) {
  const auto a = sample_environment(3, 4, 2, 99, 5);
  const auto b = sample_environment(3, 4, 2, 99, 5);
  EXPECT_EQ(a.G, b.G);
  EXPECT_EQ(a.u4, b.u4);
  for (std::size_t k = 1; k <= 3; ++k) {
    EXPECT_EQ(a.u2[k], b.u2[k]);
    EXPECT_EQ(a.h[k], b.h[k]);
  }
}

TEST(Environment, DistinctIndicesDifferEverywhere) {
  const auto a = sample_environment(3, 4, 2, 99, 0);
  const auto b = sample_environment(3, 4, 2, 99, 1);
  for (auto i = 0; i < a.G.size(); ++i) EXPECT_NE(a.G.data()[i], b.G.data()[i]);
  for (std::size_t k = 1; k <= 3; ++k) {
    EXPECT_NE(a.u4[k], b.u4[k]);
    for (int j = 0; j < 4; ++j) EXPECT_NE(a.u2[k](j), b.u2[k](j));
    for (int j = 0; j < 3; ++j) EXPECT_NE(a.h[k](j), b.h[k](j));
  }
}

TEST(Environment, StandardNormalMoments) {
  const int count = 100000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < count; ++i) {
    const double v = sample_environment(1, 1, 1, 2024, static_cast<std::uint64_t>(i)).u4[1];
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / count;
  const double var = sum2 / count - mean * mean;
  EXPECT_LT(std::abs(mean), 4.0 / std::sqrt(static_cast<double>(count)));
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(D0, BilinearPlusCommonShiftAtTimeOne) {
  const auto sets = random_sets(1, 3, 4, 3, 2);
  const auto coeffs = derived_coefficients(LiftingSchedule::make({1, 0.5, 0}, {1, 0, 0}, {1, 0, 0}));
  const auto env = sample_environment(3, 2, 1, 7, 0);
  const Matrix d0 = d0_matrix(sets, coeffs, env, 1.0);
  const auto& ov = sets.overlaps();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      const double want = sets.y().row(j).dot(env.G * sets.x().row(i).transpose()) + ov.xnorm(i) * ov.ynorm(j) * env.u4[1];
      EXPECT_NEAR(d0(i, j), want, 1e-12);
    }
}

TEST(D0, DecoupledAtTimeZero) {
  const auto sets = random_sets(2, 3, 4, 3, 2);
  const auto coeffs = derived_coefficients(LiftingSchedule::make({1, 0.5, 0}, {1, 0, 0}, {1, 0, 0}));
  const auto env = sample_environment(3, 2, 1, 7, 0);
  const Matrix d0 = d0_matrix(sets, coeffs, env, 0.0);
  const auto& ov = sets.overlaps();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      const double want = ov.xnorm(i) * sets.y().row(j).dot(env.u2[1]) + ov.ynorm(j) * env.h[1].dot(sets.x().row(i));
      EXPECT_NEAR(d0(i, j), want, 1e-12);
    }
}

TEST(D0, SingleSurvivingTerm) {
  const auto sets = ConfigurationSets::build({{1}}, {{1}});
  const auto coeffs = derived_coefficients(LiftingSchedule::make({1, 0.5, 0}, {1, 0.5, 0}, {1, 0.5, 0}));
  auto env = zero_env(1, 1, 1);
  env.G(0, 0) = 2.0;
  EXPECT_NEAR(d0_matrix(sets, coeffs, env, 0.5)(0, 0), std::sqrt(0.5) * 2.0, 1e-15);
}

TEST(D0, EndpointIndependence) {
  const auto sets = random_sets(3, 3, 3, 4, 3);
  const auto coeffs = derived_coefficients(LiftingSchedule::make({1, 0.6, 0.2, 0}, {1, 0.7, 0.3, 0}, {1, 0.5, 0.4, 0}));
  const auto env = sample_environment(4, 3, 2, 5, 3);
  auto other = env;
  other.G *= -3.0;
  for (auto& v : other.u4) v += 1.5;
  EXPECT_EQ(d0_matrix(sets, coeffs, env, 0.0), d0_matrix(sets, coeffs, other, 0.0));
  other = env;
  for (auto& v : other.u2) v *= 2.0;
  for (auto& v : other.h) v *= -1.0;
  EXPECT_EQ(d0_matrix(sets, coeffs, env, 1.0), d0_matrix(sets, coeffs, other, 1.0));
}

TEST(D0, RejectsMismatchedEnvironment) {
  const auto sets = random_sets(3, 2, 2, 4, 3);
  const auto coeffs = derived_coefficients(LiftingSchedule::make({1, 0.5, 0}, {1, 0.5, 0}, {1, 0.5, 0}));
  EXPECT_THROW(d0_matrix(sets, coeffs, sample_environment(3, 3, 1, 1, 0), 0.5), DimensionError);
  EXPECT_THROW(d0_matrix(sets, coeffs, sample_environment(4, 3, 2, 1, 0), 0.5), DimensionError);
}

TEST(LogPartition, SingleConfiguration) {
  Matrix d0(1, 1);
  d0(0, 0) = 0.37;
  for (double s : {1.0, -1.0, 2.5})
    EXPECT_NEAR(log_partition(d0, 3.0, s).logZ, s * 3.0 * 0.37, 1e-14);
}

TEST(LogPartition, StableAtLargeBeta) {
  Matrix d0(1, 2);
  d0 << 1.0, 2.0;
  const auto st = log_partition(d0, 100.0, 1.0);
  EXPECT_TRUE(std::isfinite(st.logC(0)));
  EXPECT_NEAR(st.logC(0), 200.0 + std::log1p(std::exp(-100.0)), 1e-12);
  d0 << 1e2, 2e2;
  EXPECT_TRUE(std::isfinite(log_partition(d0, 1e4, -1.0).logZ));
}

TEST(LogPartition, SymmetricNegativeS) {
  const Matrix d0 = Matrix::Zero(2, 1);
  EXPECT_NEAR(log_partition(d0, 1.0, -1.0).logZ, std::log(2.0), 1e-15);
}

TEST(LogPartition, ShiftCovariance) {
  const auto sets = random_sets(4, 4, 5, 3, 3);
  const auto env = sample_environment(3, 3, 1, 8, 0);
  const Matrix d0 = d0_matrix(sets, derived_coefficients(LiftingSchedule::make({1, 0.5, 0}, {1, 0.5, 0}, {1, 0.5, 0})), env, 0.3);
  for (double s : {1.0, -1.0, 0.5}) {
    const double base = log_partition(d0, 2.0, s).logZ;
    const double shifted = log_partition((d0.array() + 1.7).matrix(), 2.0, s).logZ;
    EXPECT_NEAR(shifted - base, s * 2.0 * 1.7, 1e-10);
  }
}

TEST(LogPartition, RejectsBadParameters) {
  const Matrix d0 = Matrix::Zero(1, 1);
  EXPECT_THROW(log_partition(d0, 0.0, 1.0), ArgumentError);
  EXPECT_THROW(log_partition(d0, 1.0, 0.0), ArgumentError);
}

TEST(Gamma0, DegenerateAndSymmetric) {
  EXPECT_EQ(gamma0(log_partition(Matrix::Constant(1, 1, 0.4), 2.0, 1.0), 1.0)(0, 0), 1.0);
  const Matrix g = gamma0(log_partition(Matrix::Constant(2, 2, 0.3), 1.0, -1.0), -1.0);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(g.data()[i], 0.25, 1e-15);
}

TEST(Gamma0, MatchesDefinitionAndNormalizes) {
  const auto sets = random_sets(5, 4, 3, 3, 2);
  const auto coeffs = derived_coefficients(LiftingSchedule::make({1, 0.5, 0}, {1, 0.5, 0}, {1, 0.5, 0}));
  for (std::uint64_t idx = 0; idx < 50; ++idx) {
    const Matrix d0 = d0_matrix(sets, coeffs, sample_environment(3, 2, 1, 9, idx), 0.6);
    for (double s : {1.0, -1.0, 1.7}) {
      const auto st = log_partition(d0, 1.3, s);
      const Matrix g = gamma0(st, s);
      EXPECT_NEAR(g.sum(), 1.0, 1e-12);
      EXPECT_GE(g.minCoeff(), 0.0);
      // C^s / Z * A / C from the raw definition
      Eigen::VectorXd c = (1.3 * d0.array()).exp().rowwise().sum();
      const double z = c.array().pow(s).sum();
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j)
          EXPECT_NEAR(g(i, j), std::pow(c(i), s) / z * std::exp(1.3 * d0(i, j)) / c(i), 1e-12);
    }
  }
}

TEST(Gamma0, ConcentratesOnArgmaxAtLargeBeta) {
  const auto sets = random_sets(6, 4, 4, 3, 3);
  const auto coeffs = derived_coefficients(LiftingSchedule::make({1, 0.5, 0}, {1, 0, 0}, {1, 0, 0}));
  const Matrix d0 = d0_matrix(sets, coeffs, sample_environment(3, 3, 1, 10, 0), 1.0);
  Eigen::Index bi, bj;
  const double top = d0.maxCoeff(&bi, &bj);
  double second = -INFINITY;
  for (auto i = 0; i < d0.size(); ++i)
    if (d0.data()[i] < top) second = std::max(second, d0.data()[i]);
  ASSERT_GT(100.0 * (top - second), 5.0);
  EXPECT_GT(gamma0(log_partition(d0, 100.0, 1.0), 1.0)(bi, bj), 0.99);
}
