#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "hflow/gaussian_field.hpp"
#include "oracles.hpp"

using namespace hflow;

namespace {

// n draws of the increment at `points`, one row per draw.
std::vector<std::vector<double>> draws(FieldSampler& s, const std::vector<double>& points, double dt, int n,
                                       std::uint64_t seed) {
  Stream stream(seed);
  std::vector<std::vector<double>> out(n);
  for (auto& row : out) row = s.sample_increment(points, dt, stream);
  return out;
}

std::vector<double> column(const std::vector<std::vector<double>>& d, std::size_t j) {
  std::vector<double> c;
  c.reserve(d.size());
  for (const auto& r : d) c.push_back(r[j]);
  return c;
}

void expect_covariance_matches(const CovarianceSpec& spec, const std::vector<double>& pts, double dt, int n,
                               std::uint64_t seed) {
  FieldSampler s(spec);
  const auto d = draws(s, pts, dt, n, seed);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const auto est = oracle::covariance_with_se(column(d, i), column(d, j));
      const double target = dt * spec(pts[i] - pts[j]);
      EXPECT_LE(std::abs(est.value - target), 5.0 * est.stderr_value) << i << "," << j;
    }
}

}  // namespace

TEST(Gram, OnePoint) {
  const std::vector<double> p{0.4};
  const auto g = gram(CovarianceSpec::exact(1.0, 1.0), p);
  ASSERT_EQ(g.rows(), 1);
  EXPECT_EQ(g(0, 0), 1.0);
}

TEST(Gram, CoincidentPoints) {
  const std::vector<double> p{0.4, 0.4};
  const auto g = gram(build_mollified(1.0, 1.0, 0.2), p);
  EXPECT_EQ(g, Eigen::MatrixXd::Ones(2, 2));
}

TEST(Gram, TwoPointsLaplace) {
  const std::vector<double> p{0.0, 1.0};
  const auto g = gram(CovarianceSpec::exact(1.0, 1.0), p);
  EXPECT_EQ(g(0, 0), 1.0);
  EXPECT_EQ(g(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(g(0, 1), std::exp(-1.0));
  EXPECT_EQ(g(0, 1), g(1, 0));
}

TEST(Factorize, Identity) {
  const auto f = factorize(Eigen::MatrixXd::Identity(4, 4));
  EXPECT_EQ(f.jitter, 0.0);
  EXPECT_EQ(f.lower, Eigen::MatrixXd::Identity(4, 4));
}

TEST(Factorize, RankOneNeedsJitter) {
  const Eigen::MatrixXd g = Eigen::MatrixXd::Ones(2, 2);
  const auto f = factorize(g);
  EXPECT_GT(f.jitter, 0.0);
  EXPECT_NEAR(f.lower(0, 0), std::sqrt(1.0 + f.jitter), 1e-15);
  EXPECT_EQ(f.lower(0, 1), 0.0);
  EXPECT_NEAR(f.lower(1, 0), 1.0, 1e-12);
  EXPECT_LT(f.lower(1, 1), 1e-5);
  EXPECT_LE((f.lower * f.lower.transpose() - g).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Factorize, RandomFivePointGram) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const CovarianceSpec specs[] = {CovarianceSpec::exact(1.0, 1.0), CovarianceSpec::exact(1.7, 0.5),
                                  build_mollified(1.0, 1.0, 0.2)};
  for (const auto& spec : specs)
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> p(5);
      for (auto& x : p) x = u(rng);
      const Eigen::MatrixXd g = gram(spec, p);
      const auto f = factorize(g);
      // Oracle: direct product, compared entrywise.
      double worst = 0.0;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
          double s = 0.0;
          for (int k = 0; k < 5; ++k) s += f.lower(i, k) * f.lower(j, k);
          worst = std::max(worst, std::abs(s - g(i, j) - (i == j ? f.jitter : 0.0)));
        }
      EXPECT_LE(worst, 1e-8);
    }
}

TEST(Factorize, IndefiniteMatrixReportsMinor) {
  Eigen::MatrixXd g(3, 3);
  g << 1, 0.2, 0.1, 0.2, 1, 2, 0.1, 2, 1;
  try {
    factorize(g);
    FAIL() << "expected FactorizationError";
  } catch (const FactorizationError& e) {
    EXPECT_EQ(e.minor_index(), 2u);
  }
}

TEST(SampleIncrement, RejectsNonPositiveDt) {
  FieldSampler s(CovarianceSpec::exact(1.0, 1.0));
  Stream stream(1);
  const std::vector<double> p{0.0};
  EXPECT_THROW(s.sample_increment(p, 0.0, stream), DomainError);
}

TEST(SampleIncrement, OnePointUnitVariance) {
  FieldSampler s(CovarianceSpec::exact(1.0, 1.0));
  const auto d = draws(s, {0.3}, 1.0, 100000, 21);
  const auto v = oracle::covariance_with_se(column(d, 0), column(d, 0));
  EXPECT_GE(v.value, 0.98);
  EXPECT_LE(v.value, 1.02);
}

TEST(SampleIncrement, CoincidentPointsAreEqual) {
  for (const auto& spec : {CovarianceSpec::exact(1.0, 1.0), build_mollified(1.0, 1.0, 0.2)}) {
    FieldSampler s(spec);
    const auto d = draws(s, {0.1, 0.1, 0.7}, 0.3, 2000, 4);
    for (const auto& row : d) EXPECT_EQ(row[0], row[1]);
  }
}

TEST(SampleIncrement, TwoPointCovariance) {
  FieldSampler s(CovarianceSpec::exact(1.0, 1.0));
  const auto d = draws(s, {0.0, 1.0}, 0.5, 100000, 22);
  const auto c = oracle::covariance_with_se(column(d, 0), column(d, 1));
  EXPECT_LE(std::abs(c.value - 0.5 * std::exp(-1.0)), 5.0 * c.stderr_value);
}

TEST(SampleIncrement, DeterministicGivenSeed) {
  FieldSampler a(build_mollified(1.0, 1.0, 0.3)), b(build_mollified(1.0, 1.0, 0.3));
  EXPECT_EQ(draws(a, {0.0, 0.5, 2.0}, 0.1, 50, 9), draws(b, {0.0, 0.5, 2.0}, 0.1, 50, 9));
}

TEST(Properties, EmpiricalCovarianceMatchesGram) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const CovarianceSpec specs[] = {CovarianceSpec::exact(1.0, 1.0), CovarianceSpec::exact(0.6, 1.0),
                                  build_mollified(1.0, 1.0, 0.2), build_mollified(1.5, 2.0, 0.4, Mollifier::bump)};
  std::uint64_t seed = 100;
  for (const auto& spec : specs)
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<double> p(2 + trial);
      for (auto& x : p) x = u(rng);
      expect_covariance_matches(spec, p, 0.05 + 0.3 * trial, 10000, ++seed);
    }
}

TEST(Properties, VarianceScalesWithDt) {
  FieldSampler s(build_mollified(1.0, 1.0, 0.2));
  const auto a = draws(s, {0.2}, 0.01, 10000, 41);
  const auto b = draws(s, {0.2}, 0.04, 10000, 42);
  const double ratio = oracle::covariance_with_se(column(b, 0), column(b, 0)).value /
                       oracle::covariance_with_se(column(a, 0), column(a, 0)).value;
  EXPECT_GE(ratio, 3.6);
  EXPECT_LE(ratio, 4.4);
}

TEST(Properties, SuccessiveIncrementsUncorrelated) {
  FieldSampler s(CovarianceSpec::exact(1.0, 1.0));
  const auto d = draws(s, {0.0, 0.4}, 0.01, 10001, 43);
  const auto x = column(d, 0);
  const std::vector<double> lead(x.begin() + 1, x.end()), lag(x.begin(), x.end() - 1);
  const auto c = oracle::covariance_with_se(lead, lag);
  const auto v = oracle::covariance_with_se(x, x);
  EXPECT_LE(std::abs(c.value / v.value), 0.03);
}

TEST(Sampler, CachedFactorReproducesGram) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const CovarianceSpec specs[] = {CovarianceSpec::exact(1.0, 1.0), CovarianceSpec::exact(1.5, 1.0),
                                  build_mollified(1.0, 1.0, 0.2)};
  for (const auto& spec : specs) {
    FieldSampler s(spec);
    Stream stream(2);
    std::vector<double> p(12);
    for (auto& x : p) x = u(rng);
    s.sample_increment(p, 0.1, stream);
    const std::vector<double> pts(s.cached_points().begin(), s.cached_points().end());
    const Eigen::MatrixXd a = s.factor_matrix();
    const Eigen::MatrixXd target =
        gram(spec, pts) + s.last_jitter() * Eigen::MatrixXd::Identity(a.rows(), a.rows());
    EXPECT_LE((a * a.transpose() - target).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Sampler, LaplaceKernelUsesMarkovFactor) {
  FieldSampler s(CovarianceSpec::exact(1.0, 2.0));
  Stream stream(3);
  s.sample_increment(std::vector<double>{-1.0, 0.0, 0.3, 2.0}, 0.1, stream);
  EXPECT_EQ(s.last_method(), FactorMethod::markov);
}

TEST(Sampler, NearCoincidentPointsFactorStably) {
  // Mollified Gram of points 1e-7 apart is close to rank deficient.
  FieldSampler s(build_mollified(1.0, 1.0, 0.1));
  Stream stream(4);
  const std::vector<double> p{0.0, 1e-7, 2e-7, 0.5, 0.5 + 1e-7};
  const auto inc = s.sample_increment(p, 0.01, stream);
  for (double v : inc) EXPECT_TRUE(std::isfinite(v));
  const std::vector<double> pts(s.cached_points().begin(), s.cached_points().end());
  const Eigen::MatrixXd a = s.factor_matrix();
  const Eigen::MatrixXd target = gram(s.spec(), pts) + s.last_jitter() * Eigen::MatrixXd::Identity(5, 5);
  EXPECT_LE((a * a.transpose() - target).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(std::abs(inc[0] - inc[1]), 1e-4);
}

TEST(Sampler, CacheSkipsFrozenConfigurations) {
  FieldSampler s(build_mollified(1.0, 1.0, 0.2));
  Stream stream(5);
  const std::vector<double> p{0.0, 0.5, 1.0};
  s.sample_increment(p, 0.1, stream);
  s.sample_increment(p, 0.1, stream);
  EXPECT_EQ(s.factorizations(), 1u);
  s.sample_increment(std::vector<double>{0.0, 0.5, 1.0 + 1e-12}, 0.1, stream);
  EXPECT_EQ(s.factorizations(), 1u);
  s.sample_increment(std::vector<double>{0.0, 0.5, 1.1}, 0.1, stream);
  EXPECT_EQ(s.factorizations(), 2u);
}

TEST(Sampler, UnsortedInputIsHandled) {
  // The same draw must come out regardless of the order points are passed in.
  FieldSampler a(build_mollified(1.0, 1.0, 0.2)), b(build_mollified(1.0, 1.0, 0.2));
  Stream sa(6), sb(6);
  const auto x = a.sample_increment(std::vector<double>{0.0, 0.5, 1.0}, 0.1, sa);
  const auto y = b.sample_increment(std::vector<double>{1.0, 0.0, 0.5}, 0.1, sb);
  EXPECT_EQ(x[0], y[1]);
  EXPECT_EQ(x[1], y[2]);
  EXPECT_EQ(x[2], y[0]);
}
