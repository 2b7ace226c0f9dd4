#pragma once

// Coalescing n-point motion of the Harris flow: Euler steps on the distinct
// class representatives, correlated through phi, with absorbing merges.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "hflow/covariance.hpp"
#include "hflow/errors.hpp"
#include "hflow/gaussian_field.hpp"
#include "hflow/rng.hpp"
#include "hflow/trajectory.hpp"

namespace hflow {

struct HarrisOptions {
  // Adjacent classes closer than merge_constant * sqrt(dt) after a step merge.
  double merge_constant = 0.05;
  // Simulation steps to store; empty records every step.
  std::vector<double> record_times;
  FieldOptions field;
};

struct CoalesceResult {
  std::vector<double> values;       // one per surviving class, strictly increasing
  std::vector<std::size_t> group;   // input class -> surviving class
};

/// Merge rule for one step. `before` is strictly increasing; `after` holds the
/// same classes after the Euler increment. Adjacent blocks merge when they
/// crossed (or touch) or end within `threshold`; a merged block takes the mean
/// of its members' post-step values. Pooling repeats until the survivors are
/// ordered and separated, and the result does not depend on scan direction.
inline CoalesceResult coalesce_rule(std::span<const double> before, std::span<const double> after, double threshold) {
  if (before.size() != after.size()) throw DomainError("coalesce_rule: size mismatch");
  struct Group {
    std::size_t first;
    std::size_t count;
    double sum;
    double value() const { return sum / static_cast<double>(count); }
  };
  std::vector<Group> stack;
  stack.reserve(before.size());
  for (std::size_t j = 0; j < before.size(); ++j) {
    Group g{j, 1, after[j]};
    while (!stack.empty() && g.value() - stack.back().value() <= threshold) {
      const Group& left = stack.back();
      g = Group{left.first, left.count + g.count, left.sum + g.sum};
      stack.pop_back();
    }
    stack.push_back(g);
  }

  CoalesceResult out;
  out.values.reserve(stack.size());
  out.group.assign(before.size(), 0);
  for (std::size_t s = 0; s < stack.size(); ++s) {
    out.values.push_back(stack[s].value());
    const std::size_t end = s + 1 < stack.size() ? stack[s + 1].first : before.size();
    for (std::size_t j = stack[s].first; j < end; ++j) out.group[j] = s;
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> record_steps(const TimeGrid& grid, std::span<const double> record_times) {
  std::vector<std::size_t> steps;
  if (record_times.empty()) {
    steps.resize(grid.steps() + 1);
    std::iota(steps.begin(), steps.end(), std::size_t{0});
    return steps;
  }
  for (double t : record_times) {
    if (t < -1e-12 || t > grid.horizon + 1e-12) throw DomainError("record time outside [0, T]");
    steps.push_back(grid.nearest(t));
  }
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

inline void validate_starts(std::span<const Start> starts, double horizon) {
  for (std::size_t i = 0; i < starts.size(); ++i) {
    if (!std::isfinite(starts[i].x)) throw DomainError("non-finite start position");
    if (starts[i].t < 0.0 || starts[i].t > horizon + 1e-12) throw DomainError("start time outside [0, T]");
    if (i > 0 && (starts[i].t < starts[i - 1].t || (starts[i].t == starts[i - 1].t && starts[i].x < starts[i - 1].x)))
      throw DomainError("starts must be sorted by (t, x)");
  }
}

// Union-find over trajectories; roots carry the class value and label.
struct ClassForest {
  std::vector<int> parent;
  std::vector<int> label;
  std::vector<double> value;

  explicit ClassForest(std::size_t n) : parent(n), label(n), value(n, 0.0) {
    std::iota(parent.begin(), parent.end(), 0);
    std::iota(label.begin(), label.end(), 0);
  }

  int find(int i) {
    while (parent[static_cast<std::size_t>(i)] != i) {
      auto& p = parent[static_cast<std::size_t>(i)];
      p = parent[static_cast<std::size_t>(p)];
      i = p;
    }
    return i;
  }

  int unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    const double v = value[static_cast<std::size_t>(a)];
    if (label[static_cast<std::size_t>(b)] < label[static_cast<std::size_t>(a)]) std::swap(a, b);
    parent[static_cast<std::size_t>(b)] = a;
    value[static_cast<std::size_t>(a)] = v;
    return a;
  }
};

}  // namespace detail

/// Simulates the coalescing motion of `starts` on [0, T] with steps of dt.
inline TrajectoryBundle evolve_harris(const CovarianceSpec& spec, std::span<const Start> starts, double horizon,
                                      double dt, Stream& stream, const HarrisOptions& opt = {}) {
  const TimeGrid grid = TimeGrid::make(horizon, dt);
  detail::validate_starts(starts, horizon);
  const std::size_t n = starts.size();
  const std::size_t steps = grid.steps();
  const std::vector<std::size_t> record = detail::record_steps(grid, opt.record_times);
  const double threshold = opt.merge_constant * std::sqrt(dt);

  TrajectoryBundle b;
  b.kind = FlowKind::harris;
  b.dt = dt;
  b.starts.assign(starts.begin(), starts.end());
  for (std::size_t k : record) b.time_grid.push_back(grid.time(k));
  b.paths.assign(n * record.size(), 0.0);
  b.classes.assign(record.size(), std::vector<int>(n));

  std::vector<std::size_t> activation(n);
  for (std::size_t i = 0; i < n; ++i) activation[i] = grid.snap_below(starts[i].t);
  std::vector<std::size_t> pending(n);
  std::iota(pending.begin(), pending.end(), std::size_t{0});
  std::stable_sort(pending.begin(), pending.end(), [&](std::size_t a, std::size_t c) {
    return activation[a] < activation[c] || (activation[a] == activation[c] && starts[a].x < starts[c].x);
  });

  detail::ClassForest forest(n);
  std::vector<char> active_flag(n, 0);
  std::vector<int> active;         // class roots ordered by value
  std::vector<double> positions;   // values of `active`
  std::vector<double> increments;
  std::vector<double> after;
  std::vector<int> merged_roots;
  std::vector<double> merged_pos;
  FieldSampler sampler(spec, opt.field);

  std::size_t next_pending = 0;
  std::size_t next_record = 0;
  for (std::size_t k = 0;; ++k) {
    if (next_pending < n && activation[pending[next_pending]] == k) {
      merged_roots.clear();
      merged_pos.clear();
      std::size_t a = 0;
      while (next_pending < n && activation[pending[next_pending]] == k) {
        const std::size_t i = pending[next_pending++];
        const double x = starts[i].x;
        active_flag[i] = 1;
        while (a < active.size() && positions[a] < x) {
          merged_roots.push_back(active[a]);
          merged_pos.push_back(positions[a]);
          ++a;
        }
        if (a < active.size() && positions[a] == x) {
          forest.unite(active[a], static_cast<int>(i));
          continue;
        }
        if (!merged_pos.empty() && merged_pos.back() == x) {
          const int r = forest.unite(merged_roots.back(), static_cast<int>(i));
          merged_roots.back() = r;
          forest.value[static_cast<std::size_t>(r)] = x;
          continue;
        }
        forest.value[i] = x;
        merged_roots.push_back(static_cast<int>(i));
        merged_pos.push_back(x);
      }
      for (; a < active.size(); ++a) {
        merged_roots.push_back(active[a]);
        merged_pos.push_back(positions[a]);
      }
      for (std::size_t c = 0; c < merged_roots.size(); ++c) merged_roots[c] = forest.find(merged_roots[c]);
      active.swap(merged_roots);
      positions.swap(merged_pos);
    }

    if (next_record < record.size() && record[next_record] == k) {
      for (std::size_t i = 0; i < n; ++i) {
        double v = starts[i].x;
        int lbl = static_cast<int>(i);
        if (active_flag[i]) {
          const auto r = static_cast<std::size_t>(forest.find(static_cast<int>(i)));
          v = forest.value[r];
          lbl = forest.label[r];
        }
        b.value(i, next_record) = v;
        b.classes[next_record][i] = lbl;
      }
      ++next_record;
    }
    if (k == steps) break;
    if (active.empty()) continue;

    const double step = grid.time(k + 1) - grid.time(k);
    increments.resize(active.size());
    sampler.sample_increment(positions, step, stream, increments);
    after.resize(active.size());
    for (std::size_t c = 0; c < active.size(); ++c) after[c] = positions[c] + increments[c];

    CoalesceResult merged = coalesce_rule(positions, after, threshold);
    if (merged.values.size() == active.size()) {
      positions.swap(after);
    } else {
      std::vector<int> roots(merged.values.size(), -1);
      for (std::size_t c = 0; c < active.size(); ++c) {
        int& r = roots[merged.group[c]];
        r = r < 0 ? active[c] : forest.unite(r, active[c]);
      }
      active.assign(roots.begin(), roots.end());
      positions = std::move(merged.values);
    }
    for (std::size_t c = 0; c < active.size(); ++c) forest.value[static_cast<std::size_t>(active[c])] = positions[c];
  }
  return b;
}

/// X(., s, t) on an ordered grid of starts at time s, simulated jointly.
inline FlowMap flow_map(const CovarianceSpec& spec, std::span<const double> grid_points, double s, double t, double dt,
                        Stream& stream, const HarrisOptions& opt = {}) {
  if (!(t >= s)) throw DomainError("flow_map requires s <= t");
  if (!std::is_sorted(grid_points.begin(), grid_points.end())) throw DomainError("flow_map grid must be sorted");
  FlowMap map;
  map.s = s;
  map.t = t;
  map.starts.assign(grid_points.begin(), grid_points.end());
  if (t == s) {
    map.images = map.starts;
    return map;
  }
  std::vector<Start> starts;
  starts.reserve(grid_points.size());
  for (double y : grid_points) starts.push_back({y, 0.0});
  HarrisOptions o = opt;
  o.record_times = {t - s};
  const TrajectoryBundle b = evolve_harris(spec, starts, t - s, dt, stream, o);
  map.images.resize(grid_points.size());
  for (std::size_t i = 0; i < grid_points.size(); ++i) map.images[i] = b.value(i, 0);
  return map;
}

}  // namespace hflow
