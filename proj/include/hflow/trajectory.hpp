#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hflow/errors.hpp"

namespace hflow {

struct Start {
  double x = 0.0;
  double t = 0.0;
  friend bool operator==(const Start&, const Start&) = default;
};

enum class FlowKind { harris, smooth };

inline std::string to_string(FlowKind k) { return k == FlowKind::harris ? "harris" : "smooth"; }

/// Simulation time grid t_k = min(k dt, T), k = 0..steps.
struct TimeGrid {
  double horizon = 1.0;
  double dt = 1e-3;

  static TimeGrid make(double horizon, double dt) {
    if (!(dt > 0.0)) throw DomainError("dt must be positive");
    if (!(horizon >= 0.0)) throw DomainError("horizon must be nonnegative");
    if (horizon > 0.0 && dt > horizon * (1.0 + 1e-12)) throw DomainError("dt must not exceed the horizon");
    return {horizon, dt};
  }

  std::size_t steps() const {
    if (horizon <= 0.0) return 0;
    return static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
  }
  double time(std::size_t k) const { return std::min(static_cast<double>(k) * dt, horizon); }
  // Start times snap to the grid point at or below.
  std::size_t snap_below(double t) const {
    if (t <= 0.0) return 0;
    return std::min(steps(), static_cast<std::size_t>(std::floor(t / dt + 1e-9)));
  }
  std::size_t nearest(double t) const {
    if (t <= 0.0) return 0;
    return std::min(steps(), static_cast<std::size_t>(std::llround(t / dt)));
  }
};

/// n paths recorded on a subset of the simulation grid, with per-time
/// coalescence classes. Class labels are the smallest member index.
struct TrajectoryBundle {
  FlowKind kind = FlowKind::harris;
  double dt = 0.0;
  std::vector<double> time_grid;
  std::vector<Start> starts;
  std::vector<double> paths;              // row-major n x |time_grid|
  std::vector<std::vector<int>> classes;  // [time index][coordinate]
  std::size_t order_inversions = 0;       // smooth diagnostic

  std::size_t size() const noexcept { return starts.size(); }
  std::size_t times() const noexcept { return time_grid.size(); }
  double value(std::size_t i, std::size_t k) const { return paths[i * times() + k]; }
  double& value(std::size_t i, std::size_t k) { return paths[i * times() + k]; }
  std::span<const double> path(std::size_t i) const { return {paths.data() + i * times(), times()}; }

  /// Index of a recorded time within half a simulation step.
  std::optional<std::size_t> time_index(double t) const {
    const double tol = std::max(0.5 * dt, 1e-12);
    auto it = std::lower_bound(time_grid.begin(), time_grid.end(), t - tol);
    if (it == time_grid.end() || std::abs(*it - t) > tol) return std::nullopt;
    return static_cast<std::size_t>(it - time_grid.begin());
  }

  std::size_t require_time_index(double t) const {
    auto k = time_index(t);
    if (!k) throw DomainError("time " + std::to_string(t) + " is not on the recorded grid");
    return *k;
  }

  std::size_t distinct_classes(std::size_t k) const {
    std::vector<int> c = classes[k];
    std::sort(c.begin(), c.end());
    return static_cast<std::size_t>(std::unique(c.begin(), c.end()) - c.begin());
  }
};

/// Forward map X(., s, t) on an ordered start grid.
struct FlowMap {
  double s = 0.0;
  double t = 0.0;
  std::vector<double> starts;
  std::vector<double> images;
};

/// Invariant violations of a stored bundle; empty when the bundle is sound.
inline std::vector<std::string> check_bundle_invariants(const TrajectoryBundle& b, double tol = 0.0) {
  std::vector<std::string> issues;
  const std::size_t n = b.size();
  const std::size_t m = b.times();
  if (b.paths.size() != n * m) issues.push_back("path storage size mismatch");
  if (b.classes.size() != m) issues.push_back("class storage size mismatch");
  if (!issues.empty()) return issues;

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m && b.time_grid[k] <= b.starts[i].t + 1e-12; ++k) {
      if (std::abs(b.value(i, k) - b.starts[i].x) > tol) {
        issues.push_back("coordinate " + std::to_string(i) + " moves before its start time");
        break;
      }
    }
  }

  // Absorbing classes: equal labels imply equal values, and labels never split.
  for (std::size_t k = 0; k < m; ++k) {
    const auto& c = b.classes[k];
    for (std::size_t i = 0; i < n; ++i) {
      const auto root = static_cast<std::size_t>(c[i]);
      if (root >= n || c[root] != c[i]) {
        issues.push_back("malformed class label at time index " + std::to_string(k));
        return issues;
      }
      if (std::abs(b.value(i, k) - b.value(root, k)) > tol) {
        issues.push_back("class members disagree at time index " + std::to_string(k));
        return issues;
      }
      if (k + 1 < m && b.classes[k + 1][root] != b.classes[k + 1][i]) {
        issues.push_back("class split between time indices " + std::to_string(k) + " and " + std::to_string(k + 1));
        return issues;
      }
    }
  }

  if (b.kind == FlowKind::harris) {
    // Trajectories alive at a recorded time are ordered by their values at
    // any earlier common time, so sorting by start (t, x) pairs with equal t
    // must give monotone values afterwards.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t c) {
      return b.starts[a].t < b.starts[c].t || (b.starts[a].t == b.starts[c].t && b.starts[a].x < b.starts[c].x);
    });
    for (std::size_t r = 1; r < n; ++r) {
      const std::size_t i = idx[r - 1], j = idx[r];
      if (b.starts[i].t != b.starts[j].t) continue;
      for (std::size_t k = 0; k < m; ++k) {
        if (b.time_grid[k] + 1e-12 < b.starts[i].t) continue;
        if (b.value(i, k) > b.value(j, k) + tol) {
          issues.push_back("order inversion between coordinates " + std::to_string(i) + " and " + std::to_string(j));
          return issues;
        }
      }
    }
  }
  return issues;
}

// CSV columns: replica,time,coordinate,value,class_id,direction
inline void write_bundle_csv_header(std::ostream& os) { os << "replica,time,coordinate,value,class_id,direction\n"; }

inline void write_bundle_csv_rows(std::ostream& os, const TrajectoryBundle& b, std::size_t replica) {
  char buf[128];
  for (std::size_t k = 0; k < b.times(); ++k)
    for (std::size_t i = 0; i < b.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.10g,%zu,%.17g,%d,forward\n", replica, b.time_grid[k], i, b.value(i, k),
                    b.classes[k][i]);
      os << buf;
    }
}

}  // namespace hflow
