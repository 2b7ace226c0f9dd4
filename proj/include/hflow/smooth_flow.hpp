#pragma once

// Euler-Maruyama for X_eps(x, s, t) = x + int_s^t F_eps(X_eps(x, s, r), dr):
// the field increment is sampled afresh at the current particle positions.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "hflow/covariance.hpp"
#include "hflow/errors.hpp"
#include "hflow/gaussian_field.hpp"
#include "hflow/harris_flow.hpp"
#include "hflow/rng.hpp"
#include "hflow/trajectory.hpp"

namespace hflow {

struct SmoothOptions {
  std::vector<double> record_times;  // empty records every step
  FieldOptions field;
  bool zero_noise = false;  // test hook: every increment is 0
};

inline TrajectoryBundle evolve_smooth(const CovarianceSpec& spec, std::span<const Start> starts, double horizon,
                                      double dt, Stream& stream, const SmoothOptions& opt = {}) {
  if (spec.kind() != KernelKind::mollified) throw DomainError("evolve_smooth requires a mollified kernel");
  const TimeGrid grid = TimeGrid::make(horizon, dt);
  detail::validate_starts(starts, horizon);
  const std::size_t n = starts.size();
  const std::size_t steps = grid.steps();
  const std::vector<std::size_t> record = detail::record_steps(grid, opt.record_times);

  TrajectoryBundle b;
  b.kind = FlowKind::smooth;
  b.dt = dt;
  b.starts.assign(starts.begin(), starts.end());
  for (std::size_t k : record) b.time_grid.push_back(grid.time(k));
  b.paths.assign(n * record.size(), 0.0);
  b.classes.assign(record.size(), std::vector<int>(n));
  for (auto& c : b.classes) std::iota(c.begin(), c.end(), 0);

  std::vector<std::size_t> activation(n);
  for (std::size_t i = 0; i < n; ++i) activation[i] = grid.snap_below(starts[i].t);
  std::vector<std::size_t> pending(n);
  std::iota(pending.begin(), pending.end(), std::size_t{0});
  std::stable_sort(pending.begin(), pending.end(),
                   [&](std::size_t a, std::size_t c) { return activation[a] < activation[c]; });

  std::vector<double> value(n);
  for (std::size_t i = 0; i < n; ++i) value[i] = starts[i].x;
  std::vector<std::size_t> order;  // active trajectories sorted by current value
  std::vector<double> positions;
  std::vector<double> increments;
  FieldSampler sampler(spec, opt.field);

  std::size_t next_pending = 0;
  std::size_t next_record = 0;
  for (std::size_t k = 0;; ++k) {
    bool inserted = false;
    while (next_pending < n && activation[pending[next_pending]] == k) {
      order.push_back(pending[next_pending++]);
      inserted = true;
    }
    if (inserted)
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return value[a] < value[c]; });

    if (next_record < record.size() && record[next_record] == k) {
      for (std::size_t i = 0; i < n; ++i) b.value(i, next_record) = value[i];
      ++next_record;
    }
    if (k == steps) break;
    if (order.empty()) continue;

    const double step = grid.time(k + 1) - grid.time(k);
    positions.resize(order.size());
    for (std::size_t c = 0; c < order.size(); ++c) positions[c] = value[order[c]];
    increments.assign(order.size(), 0.0);
    if (!opt.zero_noise) sampler.sample_increment(positions, step, stream, increments);
    for (std::size_t c = 0; c < order.size(); ++c) value[order[c]] = positions[c] + increments[c];

    // Adjacent pairs whose order flipped during this step. The continuum flow
    // is a homeomorphism, so these are pure discretization artefacts.
    bool flipped = false;
    for (std::size_t c = 1; c < order.size(); ++c) {
      if (value[order[c - 1]] > value[order[c]]) {
        ++b.order_inversions;
        flipped = true;
      }
    }
    if (flipped)
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return value[a] < value[c]; });
  }
  return b;
}

struct PairGap {
  std::size_t i;
  std::size_t j;
  double min_gap;
};

/// For every pair, the minimum over recorded times (after both started) of |X_i - X_j|.
inline std::vector<PairGap> min_gap_statistics(const TrajectoryBundle& b) {
  if (b.kind != FlowKind::smooth) throw DomainError("min_gap_statistics expects a smooth bundle");
  std::vector<PairGap> out;
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = i + 1; j < b.size(); ++j) {
      const double from = std::max(b.starts[i].t, b.starts[j].t);
      double gap = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < b.times(); ++k) {
        if (b.time_grid[k] + 1e-12 < from) continue;
        gap = std::min(gap, std::abs(b.value(i, k) - b.value(j, k)));
      }
      out.push_back({i, j, gap});
    }
  return out;
}

}  // namespace hflow
