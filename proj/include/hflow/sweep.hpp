#pragma once

// Desk-scale epsilon sweep: laws of smooth-flow statistics against the
// coalescing reference at fixed times.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hflow/covariance.hpp"
#include "hflow/errors.hpp"
#include "hflow/harris_flow.hpp"
#include "hflow/inverse_flow.hpp"
#include "hflow/measure.hpp"
#include "hflow/parallel.hpp"
#include "hflow/rng.hpp"
#include "hflow/smooth_flow.hpp"
#include "hflow/stats.hpp"

namespace hflow {

struct SweepConfig {
  double alpha = 1.0;
  double beta = 1.0;
  std::vector<double> epsilons{0.8, 0.4, 0.2, 0.1};
  Mollifier mollifier = Mollifier::gaussian;
  std::size_t quadrature_points = 64;

  // The two forward starts (at time 0); both must lie on the start grid.
  double x1 = -0.5;
  double x2 = 0.5;
  double horizon = 1.0;
  double dt = 1e-3;
  std::vector<double> checkpoints;           // forward times; default T/4, T/2, T
  std::vector<double> backward_checkpoints;  // backward path times; default 0, T/2

  // Jointly simulated start grid for the backward flow and the measures.
  double window = 3.0;
  double spacing = 0.25;
  std::vector<double> start_levels;  // default 0, T/2
  double bump_half_width = 1.0;      // test function for <mu(0,T), f>
  // Extra time-0 starts at window + 1, +2, ... on both sides. They widen the
  // truncation of the inverse-flow infimum without densifying the grid.
  int guard_points = 3;

  std::size_t replicas = 2000;
  std::uint64_t seed = 1;
  std::size_t bootstrap_rounds = 200;
  unsigned workers = 1;
  bool stub = false;      // epsilon cells simulate the coalescing flow instead
  bool baseline = true;   // add a row pair of two independent reference batches
};

struct SweepRow {
  double epsilon = 0.0;  // 0 marks the reference-vs-reference baseline
  std::string metric;
  double value = 0.0;
  double stderr_value = 0.0;
  std::size_t n_replicas = 0;
  std::uint64_t seed = 0;
};

// Metrics gated by the monotone-trend check; the rest are informational.
inline const std::vector<std::string>& gated_metrics() {
  static const std::vector<std::string> m{"forward", "backward", "measure"};
  return m;
}

inline double triangular_bump(double x, double half_width) {
  const double a = std::abs(x) / half_width;
  return a < 1.0 ? (1.0 - a) / half_width : 0.0;
}

namespace detail {

struct ReplicaStats {
  std::vector<double> forward_gap;   // per checkpoint
  std::vector<double> forward_x1;
  std::vector<double> forward_x2;
  std::vector<double> backward_gap;  // per backward checkpoint
  std::vector<double> backward_x1;
  std::vector<double> backward_x2;
  double bump = 0.0;
  EmpiricalMeasure measure;
};

inline std::vector<double> with_default(const std::vector<double>& v, std::vector<double> fallback) {
  return v.empty() ? fallback : v;
}

inline std::vector<Start> sweep_starts(const SweepConfig& c) {
  const std::vector<double> levels = with_default(c.start_levels, {0.0, 0.5 * c.horizon});
  const auto cells = static_cast<long>(std::llround(2.0 * c.window / c.spacing));
  std::vector<Start> out;
  for (double t : levels)
    for (long k = 0; k <= cells; ++k) out.push_back({-c.window + static_cast<double>(k) * c.spacing, t});
  for (int g = 1; g <= c.guard_points; ++g) {
    out.push_back({-c.window - g, 0.0});
    out.push_back({c.window + g, 0.0});
  }
  std::sort(out.begin(), out.end(), [](const Start& a, const Start& b) { return a.t < b.t || (a.t == b.t && a.x < b.x); });
  return out;
}

inline void validate_sweep(const SweepConfig& c) {
  if (c.epsilons.empty()) throw DomainError("sweep needs at least one epsilon");
  for (std::size_t k = 1; k < c.epsilons.size(); ++k)
    if (!(c.epsilons[k] < c.epsilons[k - 1])) throw DomainError("sweep epsilons must be strictly descending");
  if (c.replicas < 2) throw DomainError("sweep needs at least two replicas");
  if (!(c.x1 < c.x2)) throw DomainError("sweep requires x1 < x2");
  const auto on_grid = [&](double x) {
    const double k = (x + c.window) / c.spacing;
    return std::abs(k - std::round(k)) < 1e-9 && x >= -c.window && x <= c.window;
  };
  if (!on_grid(c.x1) || !on_grid(c.x2)) throw DomainError("sweep starts must lie on the start grid");
  measure_grid(c.window, c.spacing);
  TimeGrid::make(c.horizon, c.dt);
}

inline ReplicaStats run_replica(const SweepConfig& c, const CovarianceSpec& spec, bool smooth, Stream& stream) {
  const std::vector<double> fwd = with_default(c.checkpoints, {0.25 * c.horizon, 0.5 * c.horizon, c.horizon});
  const std::vector<double> bwd = with_default(c.backward_checkpoints, {0.0, 0.5 * c.horizon});
  std::vector<double> record = fwd;
  record.insert(record.end(), bwd.begin(), bwd.end());
  record.push_back(0.0);
  record.push_back(c.horizon);

  const std::vector<Start> starts = sweep_starts(c);
  TrajectoryBundle b;
  if (smooth) {
    SmoothOptions o;
    o.record_times = record;
    b = evolve_smooth(spec, starts, c.horizon, c.dt, stream, o);
  } else {
    HarrisOptions o;
    o.record_times = record;
    b = evolve_harris(spec, starts, c.horizon, c.dt, stream, o);
  }

  // Time-0 starts are the first block, sorted by position.
  const auto index_of = [&](double x) {
    const auto it = std::lower_bound(starts.begin(), starts.end(), x - 1e-9,
                                     [](const Start& s, double v) { return s.t < 0.0 || (s.t == 0.0 && s.x < v); });
    return static_cast<std::size_t>(it - starts.begin());
  };
  const std::size_t i1 = index_of(c.x1);
  const std::size_t i2 = index_of(c.x2);

  ReplicaStats r;
  for (double t : fwd) {
    const std::size_t k = b.require_time_index(t);
    r.forward_x1.push_back(b.value(i1, k));
    r.forward_x2.push_back(b.value(i2, k));
    r.forward_gap.push_back(b.value(i2, k) - b.value(i1, k));
  }
  for (double w : bwd) {
    const double y1 = invert(b, {c.x1, 0.0, c.horizon, c.horizon - w});
    const double y2 = invert(b, {c.x2, 0.0, c.horizon, c.horizon - w});
    r.backward_x1.push_back(y1);
    r.backward_x2.push_back(y2);
    r.backward_gap.push_back(y2 - y1);
  }

  // Pushforward of the time-0 level over the left grid points.
  FlowMap map;
  map.s = 0.0;
  map.t = c.horizon;
  const std::size_t kT = b.require_time_index(c.horizon);
  map.starts = measure_grid(c.window, c.spacing);
  const std::size_t first = index_of(-c.window);
  for (std::size_t i = 0; i < map.starts.size(); ++i) map.images.push_back(b.value(first + i, kT));
  r.measure = pushforward(map);
  r.bump = integrate(r.measure, [&](double x) { return triangular_bump(x, c.bump_half_width); });
  return r;
}

inline std::vector<ReplicaStats> run_batch(const SweepConfig& c, const CovarianceSpec& spec, bool smooth,
                                           const std::string& purpose) {
  std::vector<ReplicaStats> out(c.replicas);
  parallel_for(c.replicas, c.workers, [&](std::size_t r) {
    Stream stream = derive_stream(c.seed, purpose, r);
    out[r] = run_replica(c, spec, smooth, stream);
  });
  return out;
}

// Column j of a per-replica vector field, restricted to resampled indices.
template <class Get>
std::vector<double> column(const std::vector<ReplicaStats>& batch, std::span<const std::size_t> idx, Get&& get) {
  std::vector<double> v;
  v.reserve(idx.size());
  for (std::size_t i : idx) v.push_back(get(batch[i]));
  return v;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

inline std::vector<SweepRow> compare_batches(const SweepConfig& c, double epsilon, const std::vector<ReplicaStats>& a,
                                             const std::vector<ReplicaStats>& ref) {
  const std::size_t nf = a.front().forward_gap.size();
  const std::size_t nb = a.front().backward_gap.size();

  using Idx = std::span<const std::size_t>;
  const auto mean_w1 = [&](Idx ia, Idx ib, std::size_t count, auto get) {
    double s = 0.0;
    for (std::size_t j = 0; j < count; ++j) {
      const auto fa = column(a, ia, [&](const ReplicaStats& r) { return get(r, j); });
      const auto fb = column(ref, ib, [&](const ReplicaStats& r) { return get(r, j); });
      s += w1_samples(fa, fb);
    }
    return s / static_cast<double>(count);
  };

  struct Metric {
    std::string name;
    std::function<double(Idx, Idx)> stat;
  };
  const std::vector<Metric> metrics{
      {"forward", [&](Idx ia, Idx ib) { return mean_w1(ia, ib, nf, [](const ReplicaStats& r, std::size_t j) { return r.forward_gap[j]; }); }},
      {"backward", [&](Idx ia, Idx ib) { return mean_w1(ia, ib, nb, [](const ReplicaStats& r, std::size_t j) { return r.backward_gap[j]; }); }},
      {"measure", [&](Idx ia, Idx ib) { return mean_w1(ia, ib, 1, [](const ReplicaStats& r, std::size_t) { return r.bump; }); }},
      {"forward_marginal",
       [&](Idx ia, Idx ib) {
         return 0.5 * (mean_w1(ia, ib, nf, [](const ReplicaStats& r, std::size_t j) { return r.forward_x1[j]; }) +
                       mean_w1(ia, ib, nf, [](const ReplicaStats& r, std::size_t j) { return r.forward_x2[j]; }));
       }},
      {"backward_marginal",
       [&](Idx ia, Idx ib) {
         return 0.5 * (mean_w1(ia, ib, nb, [](const ReplicaStats& r, std::size_t j) { return r.backward_x1[j]; }) +
                       mean_w1(ia, ib, nb, [](const ReplicaStats& r, std::size_t j) { return r.backward_x2[j]; }));
       }},
  };

  std::vector<SweepRow> rows;
  const auto ia = all_indices(a.size());
  const auto ib = all_indices(ref.size());
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    SweepRow row;
    row.epsilon = epsilon;
    row.metric = metrics[m].name;
    row.value = metrics[m].stat(ia, ib);
    const std::uint64_t bseed = derive_seed(c.seed, "bootstrap/" + metrics[m].name, static_cast<std::uint64_t>(epsilon * 1e6));
    row.stderr_value = bootstrap_stderr(a.size(), ref.size(), c.bootstrap_rounds, bseed,
                                        [&](Idx x, Idx y) { return metrics[m].stat(x, y); });
    row.n_replicas = a.size();
    row.seed = c.seed;
    rows.push_back(row);
  }

  // Replica-paired measure distance: mean W1(mu_eps^r, mu^r) over independent pairs.
  std::vector<double> paired(a.size());
  for (std::size_t r = 0; r < a.size(); ++r) paired[r] = wasserstein1(a[r].measure, ref[r % ref.size()].measure);
  const Summary s = summarize(paired);
  rows.push_back({epsilon, "measure_paired", s.mean, s.stderr_mean, a.size(), c.seed});
  return rows;
}

}  // namespace detail

inline std::string epsilon_purpose(double epsilon) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "sweep/eps=%.17g", epsilon);
  return buf;
}

/// Runs the sweep; `on_row` sees each row as soon as it is final, so a caller
/// can flush partial results before a later cell fails.
inline std::vector<SweepRow> convergence_sweep(const SweepConfig& c,
                                               const std::function<void(const SweepRow&)>& on_row = {}) {
  detail::validate_sweep(c);
  const CovarianceSpec exact = CovarianceSpec::exact(c.alpha, c.beta);
  std::vector<SweepRow> rows;
  const auto emit = [&](std::vector<SweepRow> part) {
    for (const SweepRow& r : part) {
      if (on_row) on_row(r);
      rows.push_back(r);
    }
  };

  const auto reference = detail::run_batch(c, exact, false, "sweep/reference");
  if (c.baseline) {
    const auto second = detail::run_batch(c, exact, false, "sweep/baseline");
    emit(detail::compare_batches(c, 0.0, second, reference));
  }
  for (double eps : c.epsilons) {
    std::vector<detail::ReplicaStats> batch;
    if (c.stub) {
      batch = detail::run_batch(c, exact, false, epsilon_purpose(eps));
    } else {
      const CovarianceSpec spec = build_mollified(c.alpha, c.beta, eps, c.mollifier, c.quadrature_points);
      batch = detail::run_batch(c, spec, true, epsilon_purpose(eps));
    }
    emit(detail::compare_batches(c, eps, batch, reference));
  }
  return rows;
}

struct TrendResult {
  bool pass = true;
  std::vector<std::string> violations;
};

/// Each gated metric must satisfy d(eps_{k+1}) <= d(eps_k) + z * sqrt(se_k^2 + se_{k+1}^2).
inline TrendResult check_monotone_trend(const std::vector<SweepRow>& rows, double z = 2.0) {
  TrendResult out;
  for (const std::string& metric : gated_metrics()) {
    std::vector<const SweepRow*> col;
    for (const SweepRow& r : rows)
      if (r.metric == metric && r.epsilon > 0.0) col.push_back(&r);
    std::sort(col.begin(), col.end(), [](const SweepRow* a, const SweepRow* b) { return a->epsilon > b->epsilon; });
    for (std::size_t k = 1; k < col.size(); ++k) {
      const double slack = z * std::hypot(col[k - 1]->stderr_value, col[k]->stderr_value);
      if (col[k]->value > col[k - 1]->value + slack) {
        out.pass = false;
        char buf[200];
        std::snprintf(buf, sizeof buf, "%s: eps %.3g -> %.3g rose %.4g -> %.4g (slack %.4g)", metric.c_str(),
                      col[k - 1]->epsilon, col[k]->epsilon, col[k - 1]->value, col[k]->value, slack);
        out.violations.emplace_back(buf);
      }
    }
  }
  return out;
}

}  // namespace hflow
