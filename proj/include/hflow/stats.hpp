#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "hflow/covariance.hpp"
#include "hflow/errors.hpp"
#include "hflow/measure.hpp"
#include "hflow/rng.hpp"
#include "hflow/trajectory.hpp"

namespace hflow {

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double stderr_mean = 0.0;
};

inline Summary summarize(std::span<const double> x) {
  Summary s;
  s.n = x.size();
  if (x.empty()) return s;
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  s.mean = m;
  s.variance = x.size() > 1 ? ss / static_cast<double>(x.size() - 1) : 0.0;
  s.stderr_mean = std::sqrt(s.variance / static_cast<double>(x.size()));
  return s;
}

/// Standard error of the sample variance, from the fourth central moment.
inline double variance_stderr(std::span<const double> x) {
  const Summary s = summarize(x);
  double m4 = 0.0;
  for (double v : x) m4 += std::pow(v - s.mean, 4);
  m4 /= static_cast<double>(x.size());
  const double n = static_cast<double>(x.size());
  return std::sqrt(std::max(0.0, (m4 - s.variance * s.variance * (n - 3.0) / (n - 1.0)) / n));
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Limiting Kolmogorov tail Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_tail(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 1.0 : -1.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

inline double ks_p_value(double statistic, double effective_n) {
  const double root = std::sqrt(effective_n);
  return kolmogorov_tail((root + 0.12 + 0.11 / root) * statistic);
}

inline KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("ks_two_sample needs nonempty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return {d, ks_p_value(d, n * m / (n + m))};
}

template <class Cdf>
KsResult ks_one_sample(std::span<const double> sample, Cdf&& cdf) {
  if (sample.empty()) throw DomainError("ks_one_sample needs a nonempty sample");
  std::vector<double> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return {d, ks_p_value(d, n)};
}

/// W1 between the empirical laws of two samples.
inline double w1_samples(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("w1_samples needs nonempty samples");
  std::vector<Atom> pa, pb;
  pa.reserve(a.size());
  pb.reserve(b.size());
  for (double v : a) pa.push_back({v, 1.0 / static_cast<double>(a.size())});
  for (double v : b) pb.push_back({v, 1.0 / static_cast<double>(b.size())});
  return wasserstein1(make_measure(std::move(pa), {}), make_measure(std::move(pb), {}));
}

struct Covariation {
  double realized = 0.0;
  double predicted = 0.0;
};

/// Realized sum dX_i dX_j against sum phi(X_i - X_j) dt over the steps where
/// both coordinates are alive. The bundle must be recorded at every step.
inline Covariation empirical_covariation(const TrajectoryBundle& b, const CovarianceSpec& spec, std::size_t i,
                                         std::size_t j) {
  if (i >= b.size() || j >= b.size()) throw DomainError("coordinate index out of range");
  const double from = std::max(b.starts[i].t, b.starts[j].t);
  Covariation c;
  for (std::size_t k = 0; k + 1 < b.times(); ++k) {
    if (b.time_grid[k] + 1e-12 < from) continue;
    const double di = b.value(i, k + 1) - b.value(i, k);
    const double dj = b.value(j, k + 1) - b.value(j, k);
    c.realized += di * dj;
    c.predicted += spec(b.value(i, k) - b.value(j, k)) * (b.time_grid[k + 1] - b.time_grid[k]);
  }
  return c;
}

struct MomentBoundResult {
  bool pass = false;
  double second_moment = 0.0;
  double stderr_moment = 0.0;
  double bound = 0.0;
  double margin = 0.0;  // bound + 3 SE - moment
};

/// E(Y(y1) - Y(y2))^2 <= (y1 - y2)^2 + (8/pi)|y1 - y2| for t - s <= 1.
inline MomentBoundResult moment_bound_check(std::span<const double> differences, double y1, double y2,
                                            double elapsed) {
  if (elapsed > 1.0 + 1e-12) throw DomainError("moment bound holds for t - s <= 1 only");
  if (differences.empty()) throw DomainError("moment_bound_check needs samples");
  std::vector<double> sq(differences.size());
  for (std::size_t k = 0; k < differences.size(); ++k) sq[k] = differences[k] * differences[k];
  const Summary s = summarize(sq);
  MomentBoundResult r;
  const double gap = std::abs(y1 - y2);
  r.second_moment = s.mean;
  r.stderr_moment = s.stderr_mean;
  r.bound = gap * gap + 8.0 / std::numbers::pi * gap;
  r.margin = r.bound + 3.0 * r.stderr_moment - r.second_moment;
  r.pass = r.margin >= 0.0;
  return r;
}

/// Bootstrap standard error of a statistic of replica-indexed data. `stat`
/// receives resampled index lists for the two batches.
template <class Stat>
double bootstrap_stderr(std::size_t n_a, std::size_t n_b, std::size_t rounds, std::uint64_t seed, Stat&& stat) {
  Stream rng(seed);
  std::vector<std::size_t> ia(n_a), ib(n_b);
  std::vector<double> values;
  values.reserve(rounds);
  for (std::size_t r = 0; r < rounds; ++r) {
    for (auto& v : ia) v = static_cast<std::size_t>(rng.bits() % n_a);
    for (auto& v : ib) v = static_cast<std::size_t>(rng.bits() % n_b);
    values.push_back(stat(ia, ib));
  }
  return std::sqrt(summarize(values).variance);
}

}  // namespace hflow
