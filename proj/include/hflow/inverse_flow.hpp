#pragma once

// Inverse (backward) flow assembled from a family of forward trajectories:
//   X^{-1}(x, t1, t2, s) = inf { X(y, r, t1+t2-s) : X(y, r, t2) >= x, r in [t1, t1+t2-s] }.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "hflow/errors.hpp"
#include "hflow/trajectory.hpp"

namespace hflow {

/// Piecewise-linear path on an increasing time grid.
struct Path {
  std::vector<double> times;
  std::vector<double> values;

  double operator()(double t) const {
    if (times.empty()) throw DomainError("empty path");
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const auto k = static_cast<std::size_t>(it - times.begin());
    const double w = (t - times[k - 1]) / (times[k] - times[k - 1]);
    return values[k - 1] + w * (values[k] - values[k - 1]);
  }
};

/// Extends a path on [a1, b] to [a, b], frozen at its initial value on [a, a1].
inline Path embed(const Path& path, double a) {
  if (path.times.empty()) throw DomainError("embed: empty path");
  const double a1 = path.times.front();
  if (a > a1) throw DomainError("embed requires a <= a1");
  if (a == a1) return path;
  Path out;
  out.times.reserve(path.times.size() + 1);
  out.values.reserve(path.values.size() + 1);
  out.times.push_back(a);
  out.values.push_back(path.values.front());
  out.times.insert(out.times.end(), path.times.begin(), path.times.end());
  out.values.insert(out.values.end(), path.values.begin(), path.values.end());
  return out;
}

struct InverseQuery {
  double x = 0.0;
  double t1 = 0.0;
  double t2 = 1.0;
  double s = 0.0;
};

/// Dyadic start set k 2^-level over [-half_width, half_width] x [0, max_time],
/// sorted by (t, x). max_time < 0 means no time levels beyond t = 0.
inline std::vector<Start> dyadic_grid(double half_width, int space_level, double max_time, int time_level) {
  if (!(half_width > 0.0)) throw DomainError("grid half width must be positive");
  if (space_level < 0 || space_level > 30 || time_level < 0 || time_level > 30)
    throw DomainError("dyadic level out of range");
  const double hx = std::ldexp(1.0, -space_level);
  const double ht = std::ldexp(1.0, -time_level);
  const auto kx = static_cast<long>(std::floor(half_width / hx + 1e-9));
  const auto kt = max_time < 0.0 ? 0L : static_cast<long>(std::floor(max_time / ht + 1e-9));
  std::vector<Start> out;
  out.reserve(static_cast<std::size_t>((2 * kx + 1) * (kt + 1)));
  for (long j = 0; j <= kt; ++j)
    for (long i = -kx; i <= kx; ++i) out.push_back({static_cast<double>(i) * hx, static_cast<double>(j) * ht});
  return out;
}

inline void validate(const InverseQuery& q) {
  if (!(q.t1 <= q.s && q.s <= q.t2)) throw DomainError("inverse query requires t1 <= s <= t2");
}

inline double invert(const TrajectoryBundle& b, const InverseQuery& q) {
  validate(q);
  const double u = q.t1 + q.t2 - q.s;
  const std::size_t ku = b.require_time_index(u);
  const std::size_t k2 = b.require_time_index(q.t2);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double r = b.starts[i].t;
    if (r < q.t1 - 1e-12 || r > u + 1e-12) continue;
    if (b.value(i, k2) >= q.x) best = std::min(best, b.value(i, ku));
  }
  if (!std::isfinite(best))
    throw WindowExhaustedError("no trajectory in the start window reaches x = " + std::to_string(q.x) +
                               " at time " + std::to_string(q.t2) + "; enlarge the window or refine the grid");
  return best;
}

/// P_{0,T} X^{-1}(x, t1, T, T + t1 - .) on the bundle's recorded grid.
inline Path backward_path(const TrajectoryBundle& b, double x, double t1, double horizon) {
  const std::size_t k1 = b.require_time_index(t1);
  b.require_time_index(horizon);
  Path p;
  p.times = b.time_grid;
  p.values.assign(b.times(), 0.0);
  double at_t1 = 0.0;
  for (std::size_t k = k1; k < b.times(); ++k) {
    const double w = b.time_grid[k];
    if (w > horizon + 1e-12) {
      p.times.resize(k);
      p.values.resize(k);
      break;
    }
    p.values[k] = invert(b, {x, t1, horizon, horizon + t1 - w});
    if (k == k1) at_t1 = p.values[k];
  }
  for (std::size_t k = 0; k < k1; ++k) p.values[k] = at_t1;
  return p;
}

inline void write_path_csv_rows(std::ostream& os, const Path& p, std::size_t replica, std::size_t coordinate,
                                const char* direction) {
  char buf[128];
  for (std::size_t k = 0; k < p.times.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%zu,%.17g,%d,%s\n", replica, p.times[k], coordinate, p.values[k],
                  static_cast<int>(coordinate), direction);
    os << buf;
  }
}

}  // namespace hflow
