#pragma once

// Flat "section.key = value" experiment description. Every quantity is in
// dimensionless model time/space units. Lists are comma separated; starts
// are written x@t.

#include <algorithm>
#include <charconv>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hflow/covariance.hpp"
#include "hflow/errors.hpp"
#include "hflow/trajectory.hpp"

namespace hflow {

struct ExperimentConfig {
  struct Kernel {
    double alpha = 1.0;
    double beta = 1.0;
    std::vector<double> epsilons{0.8, 0.4, 0.2, 0.1};
    Mollifier mollifier = Mollifier::gaussian;
    std::size_t quadrature_points = 64;
    bool operator==(const Kernel&) const = default;
  } kernel;

  struct Grid {
    double window_half_width = 6.0;  // M
    int dyadic_level = 6;            // L
    std::vector<Start> starts{{0.0, 0.0}};
    double measure_spacing = 0.05;
    std::size_t max_points = 100000;  // memory budget for jointly simulated starts
    bool operator==(const Grid&) const = default;
  } grid;

  struct Time {
    double horizon = 1.0;
    double dt = 1e-3;
    std::vector<double> checkpoints;  // empty: T/4, T/2, T
    bool operator==(const Time&) const = default;
  } time;

  struct MonteCarlo {
    std::size_t replicas = 1000;
    std::uint64_t root_seed = 20240601;
    unsigned workers = 1;
    std::size_t bootstrap_rounds = 200;
    bool operator==(const MonteCarlo&) const = default;
  } monte_carlo;

  struct Outputs {
    std::string directory = "out";
    std::size_t max_replica_rows = 10;  // replicas written in full by simulate/flowmap/measure-check
    bool operator==(const Outputs&) const = default;
  } outputs;

  struct Simulate {
    FlowKind flow = FlowKind::harris;
    double epsilon = 0.2;  // smooth flow only
    bool operator==(const Simulate&) const = default;
  } simulate;

  struct FlowMapSection {
    double s = 0.0;
    double t = 1.0;
    double spacing = 0.05;
    double half_width = 5.0;
    bool operator==(const FlowMapSection&) const = default;
  } flowmap;

  struct Invert {
    std::vector<double> points{-0.5, 0.0, 0.5};
    std::vector<double> times{0.25, 0.5};
    double significance = 0.01;
    bool operator==(const Invert&) const = default;
  } invert;

  struct MeasureCheck {
    double support_half_width = 1.0;  // S
    bool operator==(const MeasureCheck&) const = default;
  } measure;

  struct Sweep {
    double x1 = -0.5;
    double x2 = 0.5;
    double window_half_width = 3.0;
    double spacing = 0.25;
    std::vector<double> backward_checkpoints;  // empty: 0, T/2
    bool stub = false;
    bool baseline = true;
    double trend_z = 2.0;
    bool operator==(const Sweep&) const = default;
  } sweep;

  struct Dump {
    double range = 3.0;
    std::size_t points = 601;
    bool operator==(const Dump&) const = default;
  } dump;

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

inline std::string fmt_double(double v) {
  // Shortest text that reads back to the same double.
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE || !std::isfinite(v))
    throw ConfigError(key, "expected a finite real, got '" + text + "'");
  return v;
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key, "expected a nonnegative integer, got '" + text + "'");
  errno = 0;
  const unsigned long long v = std::strtoull(text.c_str(), nullptr, 10);
  if (errno == ERANGE) throw ConfigError(key, "integer out of range");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const std::string& item : split_list(text)) out.push_back(parse_double(key, item));
  return out;
}

inline std::string fmt_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt_double(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> parse;
  std::function<std::string(const ExperimentConfig&)> format;
};

#define HFLOW_REAL(name, member)                                                                   \
  Field {                                                                                          \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(name, v); },    \
        [](const ExperimentConfig& c) { return fmt_double(c.member); }                            \
  }
#define HFLOW_COUNT(name, member, type)                                                              \
  Field {                                                                                            \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = static_cast<type>(parse_unsigned(name, v)); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                          \
  }
#define HFLOW_REALS(name, member)                                                                  \
  Field {                                                                                          \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_doubles(name, v); },   \
        [](const ExperimentConfig& c) { return fmt_doubles(c.member); }                           \
  }
#define HFLOW_FLAG(name, member)                                                                   \
  Field {                                                                                          \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(name, v); },      \
        [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }        \
  }

inline const std::vector<Field>& config_fields() {
  static const std::vector<Field> fields{
      HFLOW_REAL("kernel.alpha", kernel.alpha),
      HFLOW_REAL("kernel.beta", kernel.beta),
      HFLOW_REALS("kernel.epsilons", kernel.epsilons),
      Field{"kernel.mollifier",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "gaussian") c.kernel.mollifier = Mollifier::gaussian;
              else if (v == "bump") c.kernel.mollifier = Mollifier::bump;
              else throw ConfigError("kernel.mollifier", "expected gaussian or bump, got '" + v + "'");
            },
            [](const ExperimentConfig& c) { return to_string(c.kernel.mollifier); }},
      HFLOW_COUNT("kernel.quadrature_points", kernel.quadrature_points, std::size_t),
      HFLOW_REAL("grid.window_half_width", grid.window_half_width),
      Field{"grid.dyadic_level",
            [](ExperimentConfig& c, const std::string& v) {
              const auto l = parse_unsigned("grid.dyadic_level", v);
              if (l > 30) throw ConfigError("grid.dyadic_level", "must be at most 30");
              c.grid.dyadic_level = static_cast<int>(l);
            },
            [](const ExperimentConfig& c) { return std::to_string(c.grid.dyadic_level); }},
      Field{"grid.starts",
            [](ExperimentConfig& c, const std::string& v) {
              c.grid.starts.clear();
              for (const std::string& item : split_list(v)) {
                const auto at = item.find('@');
                if (at == std::string::npos) throw ConfigError("grid.starts", "expected x@t, got '" + item + "'");
                c.grid.starts.push_back({parse_double("grid.starts", trim(item.substr(0, at))),
                                         parse_double("grid.starts", trim(item.substr(at + 1)))});
              }
            },
            [](const ExperimentConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.grid.starts.size(); ++i)
                s += (i ? ", " : "") + fmt_double(c.grid.starts[i].x) + "@" + fmt_double(c.grid.starts[i].t);
              return s;
            }},
      HFLOW_REAL("grid.measure_spacing", grid.measure_spacing),
      HFLOW_COUNT("grid.max_points", grid.max_points, std::size_t),
      HFLOW_REAL("time.horizon", time.horizon),
      HFLOW_REAL("time.dt", time.dt),
      HFLOW_REALS("time.checkpoints", time.checkpoints),
      HFLOW_COUNT("monte_carlo.replicas", monte_carlo.replicas, std::size_t),
      HFLOW_COUNT("monte_carlo.root_seed", monte_carlo.root_seed, std::uint64_t),
      HFLOW_COUNT("monte_carlo.workers", monte_carlo.workers, unsigned),
      HFLOW_COUNT("monte_carlo.bootstrap_rounds", monte_carlo.bootstrap_rounds, std::size_t),
      Field{"outputs.directory", [](ExperimentConfig& c, const std::string& v) { c.outputs.directory = v; },
            [](const ExperimentConfig& c) { return c.outputs.directory; }},
      HFLOW_COUNT("outputs.max_replica_rows", outputs.max_replica_rows, std::size_t),
      Field{"simulate.flow",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "harris") c.simulate.flow = FlowKind::harris;
              else if (v == "smooth") c.simulate.flow = FlowKind::smooth;
              else throw ConfigError("simulate.flow", "expected harris or smooth, got '" + v + "'");
            },
            [](const ExperimentConfig& c) { return to_string(c.simulate.flow); }},
      HFLOW_REAL("simulate.epsilon", simulate.epsilon),
      HFLOW_REAL("flowmap.s", flowmap.s),
      HFLOW_REAL("flowmap.t", flowmap.t),
      HFLOW_REAL("flowmap.spacing", flowmap.spacing),
      HFLOW_REAL("flowmap.half_width", flowmap.half_width),
      HFLOW_REALS("invert.points", invert.points),
      HFLOW_REALS("invert.times", invert.times),
      HFLOW_REAL("invert.significance", invert.significance),
      HFLOW_REAL("measure.support_half_width", measure.support_half_width),
      HFLOW_REAL("sweep.x1", sweep.x1),
      HFLOW_REAL("sweep.x2", sweep.x2),
      HFLOW_REAL("sweep.window_half_width", sweep.window_half_width),
      HFLOW_REAL("sweep.spacing", sweep.spacing),
      HFLOW_REALS("sweep.backward_checkpoints", sweep.backward_checkpoints),
      HFLOW_FLAG("sweep.stub", sweep.stub),
      HFLOW_FLAG("sweep.baseline", sweep.baseline),
      HFLOW_REAL("sweep.trend_z", sweep.trend_z),
      HFLOW_REAL("dump.range", dump.range),
      HFLOW_COUNT("dump.points", dump.points, std::size_t),
  };
  return fields;
}

#undef HFLOW_REAL
#undef HFLOW_COUNT
#undef HFLOW_REALS
#undef HFLOW_FLAG

inline bool divides(double whole, double part) {
  const double k = whole / part;
  return std::abs(k - std::round(k)) < 1e-9 * std::max(1.0, k);
}

}  // namespace detail

/// Number of dyadic starts 2^-L over [-M, M] x [0, max_time].
inline std::size_t dyadic_point_count(double half_width, int level, double max_time) {
  const double h = std::ldexp(1.0, -level);
  const auto per_level = 2 * static_cast<std::size_t>(std::floor(half_width / h + 1e-9)) + 1;
  const auto levels = static_cast<std::size_t>(std::floor(std::max(0.0, max_time) / h + 1e-9)) + 1;
  return per_level * levels;
}

/// Range checks; the first violation is reported with its field path.
inline void validate(const ExperimentConfig& c) {
  const auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError(key, msg); };
  if (!(c.kernel.alpha > 0.0 && c.kernel.alpha < 2.0)) fail("kernel.alpha", "must lie in (0, 2)");
  if (!(c.kernel.beta > 0.0)) fail("kernel.beta", "must be positive");
  for (double e : c.kernel.epsilons)
    if (!(e > 0.0 && e < 1.0)) fail("kernel.epsilons", "every epsilon must lie in (0, 1)");
  for (std::size_t k = 1; k < c.kernel.epsilons.size(); ++k)
    if (!(c.kernel.epsilons[k] < c.kernel.epsilons[k - 1])) fail("kernel.epsilons", "must be strictly descending");
  if (c.kernel.quadrature_points < 2) fail("kernel.quadrature_points", "must be at least 2");
  if (!(c.time.horizon > 0.0)) fail("time.horizon", "must be positive");
  if (!(c.time.dt > 0.0)) fail("time.dt", "must be positive");
  if (c.time.dt > c.time.horizon) fail("time.dt", "must not exceed time.horizon");
  for (double t : c.time.checkpoints)
    if (t < 0.0 || t > c.time.horizon) fail("time.checkpoints", "must lie in [0, time.horizon]");
  if (c.grid.starts.empty()) fail("grid.starts", "start list is empty");
  for (const Start& s : c.grid.starts)
    if (s.t < 0.0 || s.t > c.time.horizon) fail("grid.starts", "start times must lie in [0, time.horizon]");
  if (!(c.grid.window_half_width > 0.0)) fail("grid.window_half_width", "must be positive");
  if (!(c.grid.measure_spacing > 0.0) || !detail::divides(2.0 * c.grid.window_half_width, c.grid.measure_spacing))
    fail("grid.measure_spacing", "must be positive and divide the window 2M");
  double max_u = 0.0;
  for (double s : c.invert.times) max_u = std::max(max_u, c.time.horizon - s);
  if (dyadic_point_count(c.grid.window_half_width, c.grid.dyadic_level, max_u) > c.grid.max_points)
    fail("grid.dyadic_level", "dyadic start grid exceeds grid.max_points");
  if (2.0 * c.grid.window_half_width / c.grid.measure_spacing > static_cast<double>(c.grid.max_points))
    fail("grid.measure_spacing", "measure grid exceeds grid.max_points");
  if (c.monte_carlo.replicas < 2) fail("monte_carlo.replicas", "must be at least 2");
  if (c.outputs.directory.empty()) fail("outputs.directory", "must not be empty");
  if (!(c.simulate.epsilon > 0.0 && c.simulate.epsilon < 1.0)) fail("simulate.epsilon", "must lie in (0, 1)");
  if (!(c.flowmap.s >= 0.0 && c.flowmap.s <= c.flowmap.t)) fail("flowmap.s", "requires 0 <= s <= t");
  if (c.flowmap.t > c.time.horizon) fail("flowmap.t", "must not exceed time.horizon");
  if (!(c.flowmap.spacing > 0.0 && c.flowmap.half_width > 0.0) ||
      !detail::divides(2.0 * c.flowmap.half_width, c.flowmap.spacing))
    fail("flowmap.spacing", "must be positive and divide 2 * flowmap.half_width");
  for (double s : c.invert.times)
    if (s < 0.0 || s > c.time.horizon) fail("invert.times", "must lie in [0, time.horizon]");
  if (c.invert.points.empty()) fail("invert.points", "must not be empty");
  if (!(c.invert.significance > 0.0 && c.invert.significance < 1.0)) fail("invert.significance", "must lie in (0, 1)");
  if (!(c.measure.support_half_width > 0.0)) fail("measure.support_half_width", "must be positive");
  if (!(c.sweep.x1 < c.sweep.x2)) fail("sweep.x1", "requires sweep.x1 < sweep.x2");
  if (!(c.sweep.spacing > 0.0) || !detail::divides(2.0 * c.sweep.window_half_width, c.sweep.spacing))
    fail("sweep.spacing", "must be positive and divide 2 * sweep.window_half_width");
  if (!(c.dump.range > 0.0)) fail("dump.range", "must be positive");
  if (c.dump.points < 2) fail("dump.points", "must be at least 2");
}

/// Parses and validates. Unknown or repeated keys are errors.
inline ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, const detail::Field*> index;
  for (const auto& f : detail::config_fields()) index[f.key] = &f;
  ExperimentConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(number), "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError(key, "unknown key");
    if (!seen.insert(key).second) throw ConfigError(key, "repeated key");
    it->second->parse(c, value);
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config", "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text: every key in a fixed order.
inline std::string serialize(const ExperimentConfig& c) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += f.key + " = " + f.format(c) + "\n";
  return out;
}

}  // namespace hflow
