#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "hflow/harris_flow.hpp"
#include "hflow/measure.hpp"
#include "hflow/stats.hpp"
#include "oracles.hpp"

using namespace hflow;

namespace {

FlowMap mapped(double half_width, double h, double (*g)(double)) {
  FlowMap m;
  m.starts = measure_grid(half_width, h);
  for (double y : m.starts) m.images.push_back(g(y));
  return m;
}

double tent(double x) { return std::max(0.0, 1.0 - std::abs(x)); }

std::vector<Atom> random_atoms(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> loc(-3.0, 3.0), w(0.1, 1.0);
  std::vector<Atom> a(static_cast<std::size_t>(n));
  double total = 0.0;
  for (auto& v : a) total += (v = {loc(rng), w(rng)}).weight;
  for (auto& v : a) v.weight /= total;
  return a;
}

std::vector<oracle::WeightedAtom> as_oracle(const std::vector<Atom>& a) {
  std::vector<oracle::WeightedAtom> out;
  for (const auto& v : a) out.push_back({v.location, v.weight});
  return out;
}

}  // namespace

TEST(MeasureGrid, CellsCoverWindow) {
  const auto g = measure_grid(1.0, 0.25);
  EXPECT_EQ(g, (std::vector<double>{-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75}));
  EXPECT_EQ(measure_grid(6.0, 0.05).size(), 240u);
  EXPECT_THROW(measure_grid(1.0, 0.3), DomainError);
  EXPECT_THROW(measure_grid(0.0, 0.1), DomainError);
}

TEST(MakeMeasure, SortsAndPoolsEqualLocations) {
  const auto m = make_measure({{1.0, 0.5}, {-1.0, 0.25}, {1.0, 0.25}}, {-2.0, 2.0});
  ASSERT_EQ(m.atoms.size(), 2u);
  EXPECT_EQ(m.atoms[0].location, -1.0);
  EXPECT_EQ(m.atoms[1].weight, 0.75);
  EXPECT_THROW(make_measure({{0.0, 0.0}}, {}), DomainError);
  EXPECT_THROW(make_measure({{NAN, 1.0}}, {}), DomainError);
}

TEST(MakeMeasure, MassIsHalfOpen) {
  const auto m = make_measure({{-1.0, 1.0}, {0.0, 2.0}, {1.0, 4.0}}, {-2.0, 2.0});
  EXPECT_EQ(m.mass(-1.0, 1.0), 6.0);
  EXPECT_EQ(m.mass(-1.5, 0.0), 3.0);
  EXPECT_EQ(m.total_mass(), 7.0);
}

TEST(Pushforward, IdentityIsLebesgueOnWindow) {
  const auto m = pushforward(mapped(1.0, 0.01, [](double y) { return y; }));
  EXPECT_EQ(m.atoms.size(), 200u);
  EXPECT_NEAR(integrate(m, [](double x) { return x >= -1.0 && x <= 1.0 ? 1.0 : 0.0; }), 2.0, 0.01);
  EXPECT_NEAR(m.total_mass(), 2.0, 1e-12);
}

TEST(Pushforward, ShiftTranslatesIntegrals) {
  const double h = 0.01;
  const auto grid = measure_grid(1.0, h);
  const auto m = pushforward(mapped(1.0, h, [](double y) { return y + 0.37; }));
  auto f = [](double x) { return std::sin(x) * tent(x); };
  double direct = 0.0;
  for (double y : grid) direct += f(y + 0.37) * h;
  EXPECT_NEAR(integrate(m, f), direct, 1e-12);
}

TEST(Pushforward, FullyCoalescedMapIsOneAtom) {
  const auto m = pushforward(mapped(3.0, 0.05, [](double) { return 0.4; }));
  ASSERT_EQ(m.atoms.size(), 1u);
  EXPECT_EQ(m.atoms[0].location, 0.4);
  EXPECT_NEAR(m.atoms[0].weight, 6.0, 1e-12);
  EXPECT_NEAR(integrate(m, tent), 6.0 * tent(0.4), 1e-12);
}

TEST(Pushforward, RejectsIrregularGrids) {
  FlowMap m;
  m.starts = {0.0};
  m.images = {0.0};
  EXPECT_THROW(pushforward(m), DomainError);
  m.starts = {0.0, 0.1, 0.3};
  m.images = {0.0, 0.1, 0.3};
  EXPECT_THROW(pushforward(m), DomainError);
}

TEST(Integrate, ZeroFunction) {
  const auto m = pushforward(mapped(1.0, 0.1, [](double y) { return y * y; }));
  EXPECT_EQ(integrate(m, [](double) { return 0.0; }), 0.0);
}

TEST(Integrate, TentQuadratureWithinSpacing) {
  // The tent has unit mass.
  for (double h : {0.1, 0.05, 0.01}) {
    const auto m = pushforward(mapped(2.0, h, [](double y) { return y; }));
    EXPECT_LE(std::abs(integrate(m, tent) - 1.0), h);
  }
}

TEST(Integrate, Linear) {
  std::mt19937_64 rng(1);
  const auto m = make_measure(random_atoms(rng, 50), {-3.0, 3.0});
  auto f = [](double x) { return std::cos(x); };
  auto g = [](double x) { return tent(x - 0.5); };
  const double a = 2.5, b = -0.75;
  const double lhs = integrate(m, [&](double x) { return a * f(x) + b * g(x); });
  EXPECT_NEAR(lhs, a * integrate(m, f) + b * integrate(m, g), 1e-12);
}

TEST(Integrate, WarnsWhenSupportLeavesWindow) {
  const auto m = pushforward(mapped(1.0, 0.1, [](double y) { return y; }));
  std::vector<std::string> warnings;
  integrate(m, tent, Interval{-0.5, 0.5}, &warnings);
  EXPECT_TRUE(warnings.empty());
  integrate(m, tent, Interval{-2.0, 2.0}, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Wasserstein, IdenticalMeasuresAreAtZero) {
  std::mt19937_64 rng(2);
  const auto m = make_measure(random_atoms(rng, 10), {});
  EXPECT_EQ(wasserstein1(m, m), 0.0);
}

TEST(Wasserstein, UnitMassMovedByOne) {
  EXPECT_EQ(wasserstein1(make_measure({{0.0, 1.0}}, {}), make_measure({{1.0, 1.0}}, {})), 1.0);
}

TEST(Wasserstein, RescalesUnequalMass) {
  EXPECT_DOUBLE_EQ(wasserstein1(make_measure({{0.0, 1.0}}, {}), make_measure({{1.0, 2.0}}, {})), 1.0);
}

TEST(Wasserstein, MatchesCumulativeDifferenceOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_atoms(rng, 10), b = random_atoms(rng, 10);
    EXPECT_NEAR(wasserstein1(make_measure(a, {}), make_measure(b, {})), oracle::w1_bruteforce(as_oracle(a), as_oracle(b)),
                1e-9);
  }
}

TEST(Wasserstein, SymmetricAndTriangle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = make_measure(random_atoms(rng, 1 + trial % 15), {});
    const auto b = make_measure(random_atoms(rng, 1 + trial % 7), {});
    const auto c = make_measure(random_atoms(rng, 1 + trial % 11), {});
    EXPECT_NEAR(wasserstein1(a, b), wasserstein1(b, a), 1e-9);
    EXPECT_LE(wasserstein1(a, c), wasserstein1(a, b) + wasserstein1(b, c) + 1e-9);
  }
}

TEST(Properties, HarrisPushforwardKeepsMassAndObeysLocationBound) {
  const double M = 6.0, S = 1.0, T = 1.0;
  const auto grid = measure_grid(M, 0.05);
  std::vector<double> local;
  for (std::uint64_t r = 0; r < 150; ++r) {
    Stream s = derive_stream(5, "mass", r);
    const auto mu = pushforward(flow_map(CovarianceSpec::exact(1.0, 1.0), grid, 0.0, T, 1e-2, s));
    EXPECT_NEAR(mu.total_mass(), 2.0 * M, 1e-9);
    for (std::size_t k = 1; k < mu.atoms.size(); ++k) EXPECT_LT(mu.atoms[k - 1].location, mu.atoms[k].location);
    local.push_back(mu.mass(-S, S));
  }
  const Summary m = summarize(local);
  EXPECT_LE(m.mean, 2.0 * S + 2.0 * T + 3.0 * m.stderr_mean);
}
