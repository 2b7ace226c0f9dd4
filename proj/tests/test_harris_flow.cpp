#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "hflow/harris_flow.hpp"
#include "hflow/parallel.hpp"
#include "hflow/stats.hpp"

using namespace hflow;

namespace {

const CovarianceSpec laplace = CovarianceSpec::exact(1.0, 1.0);

struct PairEnd {
  double left;
  double right;
  bool merged;
};

// Two starts at time 0, terminal values and whether they share a class.
std::vector<PairEnd> pair_runs(double gap, double horizon, double dt, std::size_t replicas, std::uint64_t seed,
                               const std::string& purpose, double merge_constant = 0.05) {
  const std::vector<Start> starts{{0.0, 0.0}, {gap, 0.0}};
  HarrisOptions opt;
  opt.record_times = {horizon};
  opt.merge_constant = merge_constant;
  std::vector<PairEnd> out(replicas);
  parallel_for(replicas, 0, [&](std::size_t r) {
    Stream s = derive_stream(seed, purpose, r);
    const auto b = evolve_harris(laplace, starts, horizon, dt, s, opt);
    out[r] = {b.value(0, 0), b.value(1, 0), b.classes[0][0] == b.classes[0][1]};
  });
  return out;
}

Summary merge_frequency(const std::vector<PairEnd>& runs) {
  std::vector<double> m;
  for (const auto& p : runs) m.push_back(p.merged ? 1.0 : 0.0);
  return summarize(m);
}

// Random sorted start set: a few time levels, some coincident points.
std::vector<Start> random_starts(std::mt19937_64& rng, double horizon) {
  std::uniform_int_distribution<int> count(1, 9);
  std::uniform_real_distribution<double> x(-1.5, 1.5), t(0.0, horizon);
  std::vector<Start> s(static_cast<std::size_t>(count(rng)));
  for (auto& v : s) v = {x(rng), rng() % 3 == 0 ? t(rng) : 0.0};
  if (s.size() > 2) s[1] = s[0];
  std::sort(s.begin(), s.end(), [](const Start& a, const Start& b) { return a.t < b.t || (a.t == b.t && a.x < b.x); });
  return s;
}

}  // namespace

TEST(CoalesceRule, SeparatedClassesUnchanged) {
  const std::vector<double> before{0.0, 1.0, 2.0}, after{0.1, 0.9, 2.05};
  const auto r = coalesce_rule(before, after, 0.05 * std::sqrt(1e-3));
  EXPECT_EQ(r.values, after);
  EXPECT_EQ(r.group, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(CoalesceRule, CrossingMergesAtMeanOfPostValues) {
  // Same as both paths continuing at their average slope after they meet.
  const std::vector<double> before{0.0, 1.0}, after{0.2, 0.1};
  const auto r = coalesce_rule(before, after, 0.0);
  ASSERT_EQ(r.values.size(), 1u);
  EXPECT_DOUBLE_EQ(r.values[0], 0.15);
  EXPECT_EQ(r.group, (std::vector<std::size_t>{0, 0}));
}

TEST(CoalesceRule, ProximityMergesAtMidpoint) {
  const double dt = 1e-3;
  const double gap = 0.01 * std::sqrt(dt);
  const std::vector<double> before{0.0, 0.5}, after{0.25, 0.25 + gap};
  const auto r = coalesce_rule(before, after, 0.05 * std::sqrt(dt));
  ASSERT_EQ(r.values.size(), 1u);
  EXPECT_DOUBLE_EQ(r.values[0], 0.25 + 0.5 * gap);
}

TEST(CoalesceRule, CascadeRestoresOrder) {
  const std::vector<double> before{0.0, 1.0, 2.0, 5.0}, after{1.5, 1.0, 0.5, 5.0};
  const auto r = coalesce_rule(before, after, 0.01);
  ASSERT_EQ(r.values.size(), 2u);
  EXPECT_EQ(r.group, (std::vector<std::size_t>{0, 0, 0, 1}));
  EXPECT_DOUBLE_EQ(r.values[0], 1.0);
  EXPECT_EQ(r.values[1], 5.0);
}

namespace {

// Pools the rightmost offending adjacent pair first, the opposite order to the
// scan in coalesce_rule. With a zero threshold pooling is isotonic regression,
// whose fixed point is unique, so both must agree.
std::vector<double> pool_right_first(const std::vector<double>& after, double threshold) {
  std::vector<std::pair<double, double>> blocks;  // (sum, count)
  for (double v : after) blocks.push_back({v, 1.0});
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t k = blocks.size(); k-- > 1;) {
      const double l = blocks[k - 1].first / blocks[k - 1].second, r = blocks[k].first / blocks[k].second;
      if (r - l <= threshold) {
        blocks[k - 1] = {blocks[k - 1].first + blocks[k].first, blocks[k - 1].second + blocks[k].second};
        blocks.erase(blocks.begin() + static_cast<long>(k));
        changed = true;
        break;
      }
    }
  }
  std::vector<double> out;
  for (const auto& b : blocks) out.push_back(b.first / b.second);
  return out;
}

}  // namespace

TEST(CoalesceRule, PropertyMatchesPoolingOracleAndMirrorImage) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0.0, 0.3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> before(1 + trial % 12), after;
    double x = 0.0;
    for (auto& v : before) v = (x += 0.05 + std::abs(z(rng)));
    for (double v : before) after.push_back(v + z(rng));
    const double threshold = 0.0;
    const auto r = coalesce_rule(before, after, threshold);
    const auto oracle = pool_right_first(after, threshold);
    ASSERT_EQ(r.values.size(), oracle.size());
    for (std::size_t k = 0; k < oracle.size(); ++k) EXPECT_NEAR(r.values[k], oracle[k], 1e-12);

    std::vector<double> mb(before.rbegin(), before.rend()), ma(after.rbegin(), after.rend());
    for (auto& v : mb) v = -v;
    for (auto& v : ma) v = -v;
    const auto m = coalesce_rule(mb, ma, threshold);
    ASSERT_EQ(m.values.size(), r.values.size());
    for (std::size_t k = 0; k < m.values.size(); ++k)
      EXPECT_NEAR(m.values[k], -r.values[r.values.size() - 1 - k], 1e-12);
  }
}

TEST(CoalesceRule, SizeMismatchRejected) {
  const std::vector<double> a{0.0}, b{0.0, 1.0};
  EXPECT_THROW(coalesce_rule(a, b, 0.1), DomainError);
}

TEST(CoalesceRule, PropertyOutputOrderedAndSeparated) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 0.3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> before(1 + trial % 12), after;
    double x = 0.0;
    for (auto& v : before) v = (x += 0.05 + std::abs(z(rng)));
    for (double v : before) after.push_back(v + z(rng));
    const double threshold = 0.02;
    const auto r = coalesce_rule(before, after, threshold);
    for (std::size_t k = 1; k < r.values.size(); ++k) EXPECT_GT(r.values[k] - r.values[k - 1], threshold);
    for (std::size_t k = 1; k < r.group.size(); ++k) {
      EXPECT_GE(r.group[k], r.group[k - 1]);
      EXPECT_LE(r.group[k], r.group[k - 1] + 1);
    }
    EXPECT_EQ(r.group.back() + 1, r.values.size());
  }
}

TEST(EvolveHarris, RejectsBadInput) {
  Stream s(1);
  const std::vector<Start> unsorted{{1.0, 0.0}, {0.0, 0.0}};
  EXPECT_THROW(evolve_harris(laplace, unsorted, 1.0, 0.01, s), DomainError);
  const std::vector<Start> late{{0.0, 2.0}};
  EXPECT_THROW(evolve_harris(laplace, late, 1.0, 0.01, s), DomainError);
  const std::vector<Start> one{{0.0, 0.0}};
  EXPECT_THROW(evolve_harris(laplace, one, 1.0, 2.0, s), DomainError);
  EXPECT_THROW(evolve_harris(laplace, one, 1.0, 0.0, s), DomainError);
}

TEST(EvolveHarris, SinglePointIsBrownian) {
  const std::vector<Start> starts{{0.0, 0.0}};
  HarrisOptions opt;
  opt.record_times = {1.0};
  std::vector<double> end(5000);
  for (std::size_t r = 0; r < end.size(); ++r) {
    Stream s = derive_stream(5, "single", r);
    end[r] = evolve_harris(laplace, starts, 1.0, 0.01, s, opt).value(0, 0);
  }
  const Summary v = summarize(end);
  EXPECT_GE(v.variance, 0.94);
  EXPECT_LE(v.variance, 1.06);
  EXPECT_GT(ks_one_sample(end, normal_cdf).p_value, 0.01);
}

TEST(EvolveHarris, CoincidentStartsShareOnePath) {
  const std::vector<Start> starts{{0.3, 0.0}, {0.3, 0.0}, {0.9, 0.0}};
  Stream s(2);
  const auto b = evolve_harris(laplace, starts, 1.0, 0.01, s);
  for (std::size_t k = 0; k < b.times(); ++k) {
    EXPECT_EQ(b.value(0, k), b.value(1, k));
    EXPECT_EQ(b.classes[k][0], b.classes[k][1]);
  }
}

TEST(EvolveHarris, DeterministicGivenStream) {
  const std::vector<Start> starts{{-1.0, 0.0}, {0.0, 0.0}, {0.4, 0.0}, {0.2, 0.5}};
  Stream a(9), b(9);
  const auto x = evolve_harris(laplace, starts, 1.0, 0.01, a);
  const auto y = evolve_harris(laplace, starts, 1.0, 0.01, b);
  EXPECT_EQ(x.paths, y.paths);
  EXPECT_EQ(x.classes, y.classes);
}

TEST(EvolveHarris, LateStartsSnapBelowAndStayConstant) {
  const std::vector<Start> starts{{0.0, 0.0}, {0.5, 0.3049}};
  Stream s(4);
  const auto b = evolve_harris(laplace, starts, 1.0, 0.01, s);
  for (std::size_t k = 0; k <= 30; ++k) EXPECT_EQ(b.value(1, k), 0.5);
  EXPECT_NE(b.value(1, 31), 0.5);
}

TEST(Properties, RandomBundlesSatisfyInvariants) {
  std::mt19937_64 rng(12);
  const CovarianceSpec specs[] = {laplace, CovarianceSpec::exact(0.5, 1.0), CovarianceSpec::exact(1.5, 2.0)};
  for (int trial = 0; trial < 60; ++trial) {
    const double horizon = 0.5 + 0.5 * (trial % 3);
    const auto starts = random_starts(rng, horizon);
    Stream s(static_cast<std::uint64_t>(trial));
    const auto b = evolve_harris(specs[trial % 3], starts, horizon, 0.01, s);
    const auto issues = check_bundle_invariants(b);
    EXPECT_TRUE(issues.empty()) << trial << ": " << issues.front();
  }
}

TEST(Properties, MarginalIncrementsUncorrelatedAndLinearVariance) {
  const std::vector<Start> starts{{0.0, 0.0}, {0.7, 0.0}};
  HarrisOptions opt;
  opt.record_times = {0.5, 1.0};
  std::vector<double> first(10000), second(10000), at_half(10000), at_one(10000);
  for (std::size_t r = 0; r < first.size(); ++r) {
    Stream s = derive_stream(6, "marginal", r);
    const auto b = evolve_harris(laplace, starts, 1.0, 0.01, s, opt);
    at_half[r] = b.value(1, 0) - 0.7;
    at_one[r] = b.value(1, 1) - 0.7;
    first[r] = at_half[r];
    second[r] = at_one[r] - at_half[r];
  }
  const Summary a = summarize(first), c = summarize(second);
  double cov = 0.0;
  for (std::size_t r = 0; r < first.size(); ++r) cov += (first[r] - a.mean) * (second[r] - c.mean);
  cov /= static_cast<double>(first.size() - 1);
  EXPECT_LE(std::abs(cov / std::sqrt(a.variance * c.variance)), 0.03);
  const double ratio = summarize(at_one).variance / summarize(at_half).variance;
  EXPECT_NEAR(ratio, 2.0, 0.1);
}

TEST(Properties, QuadraticCovariationMatchesKernel) {
  const std::vector<Start> starts{{0.0, 0.0}, {1.0, 0.0}};
  std::vector<double> rel(300);
  for (std::size_t r = 0; r < rel.size(); ++r) {
    Stream s = derive_stream(7, "covariation", r);
    const auto b = evolve_harris(laplace, starts, 1.0, 1e-3, s);
    const auto c = empirical_covariation(b, laplace, 0, 1);
    rel[r] = std::abs(c.realized - c.predicted) / c.predicted;
  }
  EXPECT_LE(summarize(rel).mean, 0.1);
}

TEST(Properties, MomentBoundHolds) {
  for (double gap : {0.1, 0.5, 1.0}) {
    const auto runs = pair_runs(gap, 1.0, 0.01, 2000, 8, "moment");
    std::vector<double> d;
    for (const auto& p : runs) d.push_back(p.right - p.left);
    const auto m = moment_bound_check(d, 0.0, gap, 1.0);
    EXPECT_TRUE(m.pass) << gap << " " << m.second_moment << " " << m.bound;
    EXPECT_GT(m.margin, 0.0);
  }
}

TEST(Properties, TwoPointLawIsStationaryInTime) {
  // Pair started at time 0 run for 0.5 versus the same pair started at 0.5.
  const std::size_t n = 2000;
  std::vector<double> early(n), late(n);
  const std::vector<Start> a{{0.0, 0.0}, {0.6, 0.0}}, b{{0.0, 0.5}, {0.6, 0.5}};
  HarrisOptions half, full;
  half.record_times = {0.5};
  full.record_times = {1.0};
  for (std::size_t r = 0; r < n; ++r) {
    Stream s1 = derive_stream(9, "early", r), s2 = derive_stream(9, "late", r);
    const auto x = evolve_harris(laplace, a, 0.5, 0.01, s1, half);
    const auto y = evolve_harris(laplace, b, 1.0, 0.01, s2, full);
    early[r] = x.value(1, 0) - x.value(0, 0);
    late[r] = y.value(1, 0) - y.value(0, 0);
  }
  EXPECT_GT(ks_two_sample(early, late).p_value, 0.01);
}

TEST(Coalescence, MergeProbabilityStableUnderStepRefinement) {
  const auto coarse = merge_frequency(pair_runs(1.0, 1.0, 1e-3, 10000, 10, "coarse"));
  const auto fine = merge_frequency(pair_runs(1.0, 1.0, 1e-4, 10000, 10, "fine"));
  const double se = std::hypot(coarse.stderr_mean, fine.stderr_mean);
  RecordProperty("merge_frequency_coarse", std::to_string(coarse.mean));
  RecordProperty("merge_frequency_fine", std::to_string(fine.mean));
  EXPECT_LE(std::abs(coarse.mean - fine.mean), 3.0 * se) << coarse.mean << " vs " << fine.mean;
}

TEST(Coalescence, ProximityRuleMatchesCrossingOnlyAtFinerStep) {
  const auto with_threshold = pair_runs(0.5, 1.0, 1e-3, 2000, 11, "threshold");
  const auto crossing_only = pair_runs(0.5, 1.0, 1e-4, 2000, 11, "crossing", 0.0);
  std::vector<double> a, b;
  for (const auto& p : with_threshold) a.push_back(p.right - p.left);
  for (const auto& p : crossing_only) b.push_back(p.right - p.left);
  EXPECT_GT(ks_two_sample(a, b).p_value, 0.01);
}

TEST(FlowMap, ZeroDurationIsIdentity) {
  const std::vector<double> grid{-1.0, 0.0, 0.5};
  Stream s(1);
  const auto m = flow_map(laplace, grid, 0.3, 0.3, 0.01, s);
  EXPECT_EQ(m.images, grid);
}

TEST(FlowMap, RejectsBadArguments) {
  Stream s(1);
  const std::vector<double> unsorted{1.0, 0.0}, ok{0.0, 1.0};
  EXPECT_THROW(flow_map(laplace, unsorted, 0.0, 1.0, 0.01, s), DomainError);
  EXPECT_THROW(flow_map(laplace, ok, 1.0, 0.5, 0.01, s), DomainError);
}

TEST(FlowMap, CollapsesToStepFunction) {
  std::vector<double> grid(200);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = -5.0 + 0.05 * static_cast<double>(i);
  int collapsed = 0;
  const int replicas = 40;
  for (int r = 0; r < replicas; ++r) {
    Stream s = derive_stream(13, "collapse", static_cast<std::uint64_t>(r));
    const auto m = flow_map(laplace, grid, 0.0, 1.0, 1e-3, s);
    EXPECT_TRUE(std::is_sorted(m.images.begin(), m.images.end()));
    std::vector<double> v = m.images;
    const auto distinct = static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
    collapsed += distinct < grid.size() / 2 ? 1 : 0;
  }
  EXPECT_GE(collapsed, static_cast<int>(0.95 * replicas));
}

TEST(FlowMap, ComposesPathwise) {
  std::vector<double> grid;
  for (int i = 0; i <= 40; ++i) grid.push_back(-1.0 + 0.05 * i);
  const double dt = 1.0 / 1024.0;
  Stream whole(21), chained(21);
  const auto direct = flow_map(laplace, grid, 0.0, 1.0, dt, whole);
  const auto first = flow_map(laplace, grid, 0.0, 0.5, dt, chained);
  const auto second = flow_map(laplace, first.images, 0.5, 1.0, dt, chained);
  EXPECT_NE(direct.images, first.images);
  EXPECT_EQ(direct.images, second.images);
}
