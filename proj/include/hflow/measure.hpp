#pragma once

// Windowed empirical surrogates of the image measures lambda o X(., s, t)^{-1}.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "hflow/errors.hpp"
#include "hflow/trajectory.hpp"

namespace hflow {

struct Atom {
  double location;
  double weight;
};

struct Interval {
  double lo;
  double hi;
};

struct EmpiricalMeasure {
  std::vector<Atom> atoms;  // sorted by location, positive weights
  Interval window{0.0, 0.0};

  double total_mass() const {
    double m = 0.0;
    for (const Atom& a : atoms) m += a.weight;
    return m;
  }

  /// Mass of the half-open interval (lo, hi].
  double mass(double lo, double hi) const {
    double m = 0.0;
    for (const Atom& a : atoms)
      if (a.location > lo && a.location <= hi) m += a.weight;
    return m;
  }
};

/// Builds a measure from unsorted atoms, merging equal locations.
inline EmpiricalMeasure make_measure(std::vector<Atom> atoms, Interval window) {
  for (const Atom& a : atoms)
    if (!(a.weight > 0.0) || !std::isfinite(a.location)) throw DomainError("atoms need finite locations and positive weights");
  std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.location < b.location; });
  EmpiricalMeasure m;
  m.window = window;
  for (const Atom& a : atoms) {
    if (!m.atoms.empty() && m.atoms.back().location == a.location)
      m.atoms.back().weight += a.weight;
    else
      m.atoms.push_back(a);
  }
  return m;
}

/// Uniform start grid -M + k h, k = 0..2M/h - 1; total cell mass is exactly 2M.
inline std::vector<double> measure_grid(double half_width, double spacing) {
  if (!(half_width > 0.0 && spacing > 0.0)) throw DomainError("measure grid needs positive window and spacing");
  const auto cells = static_cast<long>(std::llround(2.0 * half_width / spacing));
  if (std::abs(static_cast<double>(cells) * spacing - 2.0 * half_width) > 1e-9 * half_width)
    throw DomainError("spacing must divide the window");
  std::vector<double> g(static_cast<std::size_t>(cells));
  for (long k = 0; k < cells; ++k) g[static_cast<std::size_t>(k)] = -half_width + static_cast<double>(k) * spacing;
  return g;
}

/// lambda o X^{-1} restricted to the start window: one atom of weight h per
/// start, coincident images pooled.
inline EmpiricalMeasure pushforward(const FlowMap& map) {
  const std::size_t n = map.starts.size();
  if (n < 2) throw DomainError("pushforward needs at least two grid starts");
  const double h = map.starts[1] - map.starts[0];
  for (std::size_t i = 2; i < n; ++i)
    if (std::abs((map.starts[i] - map.starts[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h)))
      throw DomainError("pushforward expects a uniform start grid");
  std::vector<Atom> atoms(n);
  for (std::size_t i = 0; i < n; ++i) atoms[i] = {map.images[i], h};
  return make_measure(std::move(atoms), {map.starts.front(), map.starts.back() + h});
}

/// <nu, f> = sum w_i f(x_i). A `support` reaching outside the window is
/// reported on `warnings`: mass transported in from beyond the window is missing.
template <class F>
double integrate(const EmpiricalMeasure& m, F&& f, std::optional<Interval> support = std::nullopt,
                 std::vector<std::string>* warnings = nullptr) {
  if (support && warnings && (support->lo < m.window.lo || support->hi > m.window.hi))
    warnings->push_back("test function support exceeds the measure window; tail mass is truncated");
  double s = 0.0;
  for (const Atom& a : m.atoms) s += a.weight * f(a.location);
  return s;
}

/// L1 distance between cumulative weight functions. If the total masses differ
/// by more than 1e-9, `b` is rescaled to the mass of `a` first.
inline double wasserstein1(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  const double ma = a.total_mass();
  const double mb = b.total_mass();
  const double scale = (std::abs(ma - mb) > 1e-9 && mb > 0.0) ? ma / mb : 1.0;
  std::size_t i = 0, j = 0;
  double fa = 0.0, fb = 0.0, w1 = 0.0;
  double x = 0.0;
  bool started = false;
  while (i < a.atoms.size() || j < b.atoms.size()) {
    double next;
    if (j >= b.atoms.size() || (i < a.atoms.size() && a.atoms[i].location <= b.atoms[j].location))
      next = a.atoms[i].location;
    else
      next = b.atoms[j].location;
    if (started) w1 += std::abs(fa - fb) * (next - x);
    started = true;
    x = next;
    while (i < a.atoms.size() && a.atoms[i].location == x) fa += a.atoms[i++].weight;
    while (j < b.atoms.size() && b.atoms[j].location == x) fb += scale * b.atoms[j++].weight;
  }
  return w1;
}

inline void write_measure_csv(std::ostream& os, const EmpiricalMeasure& m, std::size_t replica) {
  char buf[96];
  for (const Atom& a : m.atoms) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", replica, a.location, a.weight);
    os << buf;
  }
}

}  // namespace hflow
