#pragma once

// Subcommands of the experiment runner. Each writes CSV files plus a
// manifest.json into outputs.directory and returns a process exit code.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <nlohmann/json.hpp>

#include "hflow/config.hpp"
#include "hflow/covariance.hpp"
#include "hflow/errors.hpp"
#include "hflow/harris_flow.hpp"
#include "hflow/inverse_flow.hpp"
#include "hflow/measure.hpp"
#include "hflow/parallel.hpp"
#include "hflow/rng.hpp"
#include "hflow/smooth_flow.hpp"
#include "hflow/stats.hpp"
#include "hflow/sweep.hpp"

#ifndef HFLOW_VERSION
#define HFLOW_VERSION "0.0.0"
#endif

namespace hflow {

enum ExitCode : int { exit_ok = 0, exit_validation = 1, exit_numerical = 2, exit_statistical = 3 };

struct RunOutcome {
  int exit_code = exit_ok;
  std::string status = "ok";
  std::string message;
  std::vector<std::string> files;  // relative to the output directory
  std::vector<std::string> notes;
};

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"simulate", "flowmap", "invert-check", "measure-check", "converge",
                                              "kernel-dump"};
  return names;
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(serialize(c))); }

namespace detail {

inline std::string num(double v) {
  // Shortest text that reads back to the same double.
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class OutputDir {
 public:
  OutputDir(const std::string& dir, RunOutcome& outcome) : dir_(dir), outcome_(outcome) {
    std::filesystem::create_directories(dir_);
  }

  std::ofstream open(const std::string& name) {
    std::ofstream f(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + (dir_ / name).string());
    outcome_.files.push_back(name);
    return f;
  }

 private:
  std::filesystem::path dir_;
  RunOutcome& outcome_;
};

inline std::vector<Start> sorted_starts(std::vector<Start> s) {
  std::sort(s.begin(), s.end(), [](const Start& a, const Start& b) { return a.t < b.t || (a.t == b.t && a.x < b.x); });
  return s;
}

inline RunOutcome run_simulate(const ExperimentConfig& c, OutputDir& out) {
  RunOutcome r;
  const std::vector<Start> starts = sorted_starts(c.grid.starts);
  const bool smooth = c.simulate.flow == FlowKind::smooth;
  const CovarianceSpec spec = smooth ? build_mollified(c.kernel.alpha, c.kernel.beta, c.simulate.epsilon,
                                                       c.kernel.mollifier, c.kernel.quadrature_points)
                                     : CovarianceSpec::exact(c.kernel.alpha, c.kernel.beta);
  // Every step is recorded only when no checkpoints are configured.
  std::vector<double> record = c.time.checkpoints;
  if (!record.empty()) {
    record.push_back(0.0);
    record.push_back(c.time.horizon);
  }

  std::vector<TrajectoryBundle> bundles(c.monte_carlo.replicas);
  parallel_for(c.monte_carlo.replicas, c.monte_carlo.workers, [&](std::size_t k) {
    Stream stream = derive_stream(c.monte_carlo.root_seed, "simulate", k);
    if (smooth) {
      SmoothOptions o;
      o.record_times = record;
      bundles[k] = evolve_smooth(spec, starts, c.time.horizon, c.time.dt, stream, o);
    } else {
      HarrisOptions o;
      o.record_times = record;
      bundles[k] = evolve_harris(spec, starts, c.time.horizon, c.time.dt, stream, o);
    }
  });

  std::size_t inversions = 0;
  for (std::size_t k = 0; k < bundles.size(); ++k) {
    const auto issues = check_bundle_invariants(bundles[k], 1e-12);
    if (!issues.empty()) throw NumericalError("replica " + std::to_string(k) + ": " + issues.front());
    inversions += bundles[k].order_inversions;
  }

  auto f = out.open("bundle.csv");
  write_bundle_csv_header(f);
  for (std::size_t k = 0; k < std::min(bundles.size(), c.outputs.max_replica_rows); ++k)
    write_bundle_csv_rows(f, bundles[k], k);

  auto s = out.open("simulate_summary.csv");
  s << "time,coordinate,mean,variance,n_replicas\n";
  const TrajectoryBundle& first = bundles.front();
  for (std::size_t t = 0; t < first.times(); ++t)
    for (std::size_t i = 0; i < first.size(); ++i) {
      std::vector<double> v(bundles.size());
      for (std::size_t k = 0; k < bundles.size(); ++k) v[k] = bundles[k].value(i, t);
      const Summary sm = summarize(v);
      s << num(first.time_grid[t]) << ',' << i << ',' << num(sm.mean) << ',' << num(sm.variance) << ','
        << bundles.size() << '\n';
    }
  if (smooth) r.notes.push_back("order inversions across replicas: " + std::to_string(inversions));
  return r;
}

inline RunOutcome run_flowmap(const ExperimentConfig& c, OutputDir& out) {
  RunOutcome r;
  const CovarianceSpec spec = CovarianceSpec::exact(c.kernel.alpha, c.kernel.beta);
  const std::vector<double> grid = measure_grid(c.flowmap.half_width, c.flowmap.spacing);
  std::vector<FlowMap> maps(c.monte_carlo.replicas);
  parallel_for(maps.size(), c.monte_carlo.workers, [&](std::size_t k) {
    Stream stream = derive_stream(c.monte_carlo.root_seed, "flowmap", k);
    maps[k] = flow_map(spec, grid, c.flowmap.s, c.flowmap.t, c.time.dt, stream);
  });

  auto f = out.open("flowmap.csv");
  f << "replica,start,image\n";
  for (std::size_t k = 0; k < std::min(maps.size(), c.outputs.max_replica_rows); ++k)
    for (std::size_t i = 0; i < grid.size(); ++i) f << k << ',' << num(grid[i]) << ',' << num(maps[k].images[i]) << '\n';

  auto s = out.open("flowmap_summary.csv");
  s << "replica,grid_size,distinct_images,monotone\n";
  for (std::size_t k = 0; k < maps.size(); ++k) {
    std::vector<double> im = maps[k].images;
    const bool monotone = std::is_sorted(im.begin(), im.end());
    im.erase(std::unique(im.begin(), im.end()), im.end());
    s << k << ',' << grid.size() << ',' << im.size() << ',' << (monotone ? 1 : 0) << '\n';
    if (!monotone) throw NumericalError("flow map of replica " + std::to_string(k) + " is not monotone");
  }
  return r;
}

struct InvertCell {
  double x;
  double s;
};

inline RunOutcome run_invert_check(const ExperimentConfig& c, OutputDir& out) {
  RunOutcome r;
  const CovarianceSpec spec = CovarianceSpec::exact(c.kernel.alpha, c.kernel.beta);
  const double T = c.time.horizon;
  double max_u = 0.0;
  for (double s : c.invert.times) max_u = std::max(max_u, T - s);
  const std::vector<Start> grid =
      dyadic_grid(c.grid.window_half_width, c.grid.dyadic_level, max_u, c.grid.dyadic_level);
  std::vector<double> record{T};
  for (double s : c.invert.times) record.push_back(T - s);

  std::vector<InvertCell> cells;
  for (double x : c.invert.points)
    for (double s : c.invert.times) cells.push_back({x, s});
  const std::size_t n = c.monte_carlo.replicas;
  std::vector<std::vector<double>> back(n, std::vector<double>(cells.size()));
  std::vector<std::vector<double>> fwd(n, std::vector<double>(cells.size()));
  std::vector<std::vector<double>> matched(n, std::vector<double>(cells.size()));

  parallel_for(n, c.monte_carlo.workers, [&](std::size_t k) {
    Stream stream = derive_stream(c.monte_carlo.root_seed, "invert-check/backward", k);
    HarrisOptions o;
    o.record_times = record;
    const TrajectoryBundle b = evolve_harris(spec, grid, T, c.time.dt, stream, o);
    for (std::size_t j = 0; j < cells.size(); ++j) back[k][j] = invert(b, {cells[j].x, 0.0, T, cells[j].s});

    // Independent forward samples X(x, s, T), one run per cell. The inverse
    // above is read at time T - s, so X(x, T - s, T) is the forward sample
    // with the same elapsed time; it is reported but does not gate.
    Stream fstream = derive_stream(c.monte_carlo.root_seed, "invert-check/forward", k);
    Stream mstream = derive_stream(c.monte_carlo.root_seed, "invert-check/matched", k);
    auto forward_at = [&](double x, double from, Stream& st) {
      const Start start{x, from};
      HarrisOptions fo;
      fo.record_times = {T};
      return evolve_harris(spec, std::span<const Start>(&start, 1), T, c.time.dt, st, fo).value(0, 0);
    };
    for (std::size_t j = 0; j < cells.size(); ++j) {
      fwd[k][j] = forward_at(cells[j].x, cells[j].s, fstream);
      matched[k][j] = forward_at(cells[j].x, T - cells[j].s, mstream);
    }
  });

  auto samples = out.open("invert_samples.csv");
  samples << "replica,x,s,backward,forward,forward_matched\n";
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < cells.size(); ++j)
      samples << k << ',' << num(cells[j].x) << ',' << num(cells[j].s) << ',' << num(back[k][j]) << ','
              << num(fwd[k][j]) << ',' << num(matched[k][j]) << '\n';

  auto f = out.open("invert_check.csv");
  f << "pairing,x,s,statistic,p,bonferroni_p,pass\n";
  bool all = true;
  for (const bool gated : {true, false}) {
    const auto& other = gated ? fwd : matched;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      std::vector<double> a(n), b(n);
      for (std::size_t k = 0; k < n; ++k) {
        a[k] = back[k][j];
        b[k] = other[k][j];
      }
      const KsResult ks = ks_two_sample(a, b);
      const double adjusted = std::min(1.0, ks.p_value * static_cast<double>(cells.size()));
      const bool pass = adjusted > c.invert.significance;
      if (gated) all = all && pass;
      f << (gated ? "forward" : "elapsed_matched") << ',' << num(cells[j].x) << ',' << num(cells[j].s) << ','
        << num(ks.statistic) << ',' << num(ks.p_value) << ',' << num(adjusted) << ',' << (pass ? 1 : 0) << '\n';
    }
  }
  if (!all) {
    r.exit_code = exit_statistical;
    r.status = "statistical_failure";
    r.message = "inverse and forward laws differ in at least one cell";
  }
  return r;
}

inline RunOutcome run_measure_check(const ExperimentConfig& c, OutputDir& out) {
  RunOutcome r;
  const CovarianceSpec spec = CovarianceSpec::exact(c.kernel.alpha, c.kernel.beta);
  const double M = c.grid.window_half_width;
  const double S = c.measure.support_half_width;
  const double T = c.time.horizon;
  const std::vector<double> grid = measure_grid(M, c.grid.measure_spacing);
  std::vector<EmpiricalMeasure> mu(c.monte_carlo.replicas);
  parallel_for(mu.size(), c.monte_carlo.workers, [&](std::size_t k) {
    Stream stream = derive_stream(c.monte_carlo.root_seed, "measure-check", k);
    mu[k] = pushforward(flow_map(spec, grid, 0.0, T, c.time.dt, stream));
  });

  auto atoms = out.open("measure_atoms.csv");
  atoms << "replica,location,weight\n";
  for (std::size_t k = 0; k < std::min(mu.size(), c.outputs.max_replica_rows); ++k) write_measure_csv(atoms, mu[k], k);

  std::vector<double> mass(mu.size()), total(mu.size()), natoms(mu.size()), pair_w1;
  for (std::size_t k = 0; k < mu.size(); ++k) {
    mass[k] = mu[k].mass(-S, S);
    total[k] = mu[k].total_mass();
    natoms[k] = static_cast<double>(mu[k].atoms.size());
  }
  for (std::size_t k = 0; k + 1 < mu.size(); k += 2) pair_w1.push_back(wasserstein1(mu[k], mu[k + 1]));

  const Summary ms = summarize(mass);
  const double bound = 2.0 * S + 2.0 * T;
  const bool pass = ms.mean <= bound + 3.0 * ms.stderr_mean;
  const Summary ts = summarize(total);
  const bool mass_ok = std::abs(ts.mean - 2.0 * M) <= 1e-9 * M && ts.variance <= 1e-18;

  auto f = out.open("measure_check.csv");
  f << "metric,value,stderr,bound,pass\n";
  f << "mass_in_support," << num(ms.mean) << ',' << num(ms.stderr_mean) << ',' << num(bound) << ',' << (pass ? 1 : 0)
    << '\n';
  f << "total_mass," << num(ts.mean) << ',' << num(ts.stderr_mean) << ',' << num(2.0 * M) << ',' << (mass_ok ? 1 : 0)
    << '\n';
  const Summary as = summarize(natoms);
  f << "atoms," << num(as.mean) << ',' << num(as.stderr_mean) << ',' << grid.size() << ",1\n";
  if (!pair_w1.empty()) {
    const Summary ws = summarize(pair_w1);
    f << "w1_independent_pairs," << num(ws.mean) << ',' << num(ws.stderr_mean) << ",,1\n";
  }
  if (!mass_ok) throw NumericalError("pushforward lost mass");
  if (!pass) {
    r.exit_code = exit_statistical;
    r.status = "statistical_failure";
    r.message = "mean mass in (-S, S] exceeds 2S + 2T + 3 SE";
  }
  return r;
}

inline SweepConfig sweep_config(const ExperimentConfig& c) {
  SweepConfig s;
  s.alpha = c.kernel.alpha;
  s.beta = c.kernel.beta;
  s.epsilons = c.kernel.epsilons;
  s.mollifier = c.kernel.mollifier;
  s.quadrature_points = c.kernel.quadrature_points;
  s.x1 = c.sweep.x1;
  s.x2 = c.sweep.x2;
  s.horizon = c.time.horizon;
  s.dt = c.time.dt;
  s.checkpoints = c.time.checkpoints;
  s.backward_checkpoints = c.sweep.backward_checkpoints;
  s.window = c.sweep.window_half_width;
  s.spacing = c.sweep.spacing;
  s.replicas = c.monte_carlo.replicas;
  s.seed = c.monte_carlo.root_seed;
  s.bootstrap_rounds = c.monte_carlo.bootstrap_rounds;
  s.workers = c.monte_carlo.workers;
  s.stub = c.sweep.stub;
  s.baseline = c.sweep.baseline;
  return s;
}

inline void write_report_row(std::ostream& os, const SweepRow& row) {
  os << num(row.epsilon) << ',' << row.metric << ',' << num(row.value) << ',' << num(row.stderr_value) << ','
     << row.n_replicas << ',' << row.seed << '\n';
}

inline RunOutcome run_converge(const ExperimentConfig& c, OutputDir& out) {
  RunOutcome r;
  auto f = out.open("converge.csv");
  f << "epsilon,metric,value,stderr,n_replicas,seed\n";
  const auto rows = convergence_sweep(sweep_config(c), [&](const SweepRow& row) {
    write_report_row(f, row);
    f.flush();
  });
  const TrendResult trend = check_monotone_trend(rows, c.sweep.trend_z);
  for (const auto& v : trend.violations) r.notes.push_back(v);
  if (!trend.pass) {
    r.exit_code = exit_statistical;
    r.status = "statistical_failure";
    r.message = "distance column is not non-increasing within tolerance";
  }
  return r;
}

inline RunOutcome run_kernel_dump(const ExperimentConfig& c, OutputDir& out) {
  RunOutcome r;
  const CovarianceSpec exact = CovarianceSpec::exact(c.kernel.alpha, c.kernel.beta);
  auto f = out.open("kernel_dump.csv");
  f << "epsilon,x,phi,phi_eps\n";
  const auto n = static_cast<long>(c.dump.points);
  const auto write = [&](double eps, const CovarianceSpec& smooth) {
    for (long k = 0; k < n; ++k) {
      // Symmetric nodes; x = 0 is hit exactly for odd counts.
      const double x = c.dump.range * static_cast<double>(2 * k - (n - 1)) / static_cast<double>(n - 1);
      f << num(eps) << ',' << num(x) << ',' << num(exact(x)) << ',' << num(smooth(x)) << '\n';
    }
  };
  if (c.kernel.epsilons.empty()) write(0.0, exact);
  for (double eps : c.kernel.epsilons)
    write(eps, build_mollified(c.kernel.alpha, c.kernel.beta, eps, c.kernel.mollifier, c.kernel.quadrature_points));
  return r;
}

inline void write_manifest(const std::filesystem::path& dir, const std::string& subcommand, const ExperimentConfig& c,
                           const RunOutcome& r) {
  nlohmann::ordered_json m;
  m["tool"] = "hflow";
  m["version"] = HFLOW_VERSION;
  m["subcommand"] = subcommand;
  m["status"] = r.status;
  m["exit_code"] = r.exit_code;
  m["message"] = r.message;
  m["notes"] = r.notes;
  m["root_seed"] = c.monte_carlo.root_seed;
  m["config_hash"] = config_hash(c);
  m["config"] = serialize(c);
  m["outputs"] = r.files;
  m["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)},
                    {"boost", BOOST_LIB_VERSION}};
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  f << m.dump(2) << '\n';
}

}  // namespace detail

/// Runs one subcommand. Errors become exit codes; a manifest is written in
/// every case that reaches the output directory.
inline RunOutcome run_subcommand(const std::string& name, const ExperimentConfig& config) {
  using Runner = RunOutcome (*)(const ExperimentConfig&, detail::OutputDir&);
  static const std::map<std::string, Runner> table{
      {"simulate", detail::run_simulate},         {"flowmap", detail::run_flowmap},
      {"invert-check", detail::run_invert_check}, {"measure-check", detail::run_measure_check},
      {"converge", detail::run_converge},         {"kernel-dump", detail::run_kernel_dump}};
  RunOutcome outcome;
  const auto it = table.find(name);
  if (it == table.end()) {
    outcome.exit_code = exit_validation;
    outcome.status = "validation_failure";
    outcome.message = "unknown subcommand " + name;
    return outcome;
  }
  const std::filesystem::path dir = config.outputs.directory;
  RunOutcome partial;
  try {
    validate(config);
    detail::OutputDir out(dir.string(), partial);
    outcome = it->second(config, out);
    outcome.files = partial.files;
  } catch (const ConfigError& e) {
    outcome = partial;
    outcome.exit_code = exit_validation;
    outcome.status = "validation_failure";
    outcome.message = e.what();
  } catch (const DomainError& e) {
    outcome = partial;
    outcome.exit_code = exit_validation;
    outcome.status = "validation_failure";
    outcome.message = e.what();
  } catch (const NumericalError& e) {
    outcome = partial;
    outcome.exit_code = exit_numerical;
    outcome.status = "numerical_failure";
    outcome.message = e.what();
  } catch (const std::exception& e) {
    outcome = partial;
    outcome.exit_code = exit_numerical;
    outcome.status = "failure";
    outcome.message = e.what();
  }
  detail::write_manifest(dir, name, config, outcome);
  return outcome;
}

struct Manifest {
  std::string subcommand;
  ExperimentConfig config;
};

/// Recovers the subcommand and configuration of an earlier run.
inline Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("manifest", "cannot open " + path);
  nlohmann::json m;
  try {
    f >> m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest", e.what());
  }
  if (!m.contains("subcommand") || !m.contains("config")) throw ConfigError("manifest", "missing subcommand or config");
  Manifest out{m["subcommand"].get<std::string>(), parse_config(m["config"].get<std::string>())};
  if (m.contains("config_hash") && m["config_hash"].get<std::string>() != config_hash(out.config))
    throw ConfigError("manifest.config_hash", "does not match the embedded config");
  return out;
}

}  // namespace hflow
