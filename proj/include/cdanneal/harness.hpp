// Copyright 2026 The cdanneal Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Experiment orchestration: run configuration, the (n, m, seed) cell grid,
// CSV/JSON persistence, assumption reports, rate sweeps and re-diagnosis of
// stored runs. Every output is a pure function of (config, master seed).

#ifndef CDANNEAL_HARNESS_HPP
#define CDANNEAL_HARNESS_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cdanneal/diagnostics.hpp"
#include "cdanneal/errors.hpp"
#include "cdanneal/kernel.hpp"
#include "cdanneal/learner.hpp"
#include "cdanneal/model.hpp"
#include "cdanneal/oracle.hpp"
#include "cdanneal/rng.hpp"

namespace cdanneal {

namespace fs = std::filesystem;

/// Output directory missing and not creatable, or not writable.
class OutputDirError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  nlohmann::json model = {{"type", "fvbm"}, {"p", 2}};
  std::vector<double> theta_star = {0.5, 1.0, 0.5};
  double half_width = 3.0;
  std::vector<std::size_t> n_list = {100, 1000, 10000};
  std::vector<int> m_list = {2, 4};
  Schedule schedule{ScheduleKind::harmonic, 10.0, 1.0};
  std::size_t iterations = 1000;
  std::size_t burn_in = 50;
  double gamma = 0.45;
  std::vector<std::uint64_t> seeds = default_seeds(20);
  std::uint64_t master_seed = 0;
  int grid_points = 9;
  int zeta_grid_points = 9;
  double tail_fraction = 0.1;
  std::vector<double> theta0;  // empty: origin
  EndpointSampler sampler = EndpointSampler::chain;
  bool diagnostics = true;
  bool persist_cells = true;
  bool svg = true;
  std::string out_dir = "results";

  static std::vector<std::uint64_t> default_seeds(std::size_t count) {
    std::vector<std::uint64_t> s(count);
    for (std::size_t i = 0; i < count; ++i) s[i] = i + 1;
    return s;
  }

  bool operator==(const RunConfig&) const = default;

  /// Throws ConfigError on the first violated invariant.
  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    const FiniteExpFamily fam = family_from_json(model);
    if (theta_star.size() != fam.dim())
      fail("theta_star has " + std::to_string(theta_star.size()) + " entries, model needs " +
           std::to_string(fam.dim()));
    if (!(half_width > 0.0) || !std::isfinite(half_width)) fail("half_width must be > 0");
    for (double v : theta_star)
      if (!(std::abs(v) < half_width)) fail("theta_star must lie strictly inside the box");
    if (!theta0.empty()) {
      if (theta0.size() != fam.dim()) fail("theta0 has the wrong dimension");
      for (double v : theta0)
        if (!(std::abs(v) <= half_width)) fail("theta0 must lie in the box");
    }
    if (!(iterations > burn_in)) fail("need iterations > burn_in");
    if (n_list.empty()) fail("n_list is empty");
    for (auto n : n_list)
      if (n < 1) fail("every n must be >= 1");
    if (m_list.empty()) fail("m_list is empty");
    for (int m : m_list)
      if (m < 1) fail("every m must be >= 1");
    if (!(gamma > 0.0 && gamma < 0.5)) fail("gamma must be in (0, 1/2)");
    if (seeds.empty()) fail("seeds is empty");
    if (grid_points < 2 || zeta_grid_points < 2) fail("grids need >= 2 points per axis");
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) fail("tail_fraction must be in (0, 1]");
    try {
      schedule.validate();
    } catch (const std::exception& e) {
      fail(e.what());
    }
    if (!fam.is_binary()) fail("the Gibbs sampler needs a binary state space");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"model", c.model},
       {"theta_star", c.theta_star},
       {"half_width", c.half_width},
       {"n_list", c.n_list},
       {"m_list", c.m_list},
       {"schedule", c.schedule},
       {"iterations", c.iterations},
       {"burn_in", c.burn_in},
       {"gamma", c.gamma},
       {"seeds", c.seeds},
       {"master_seed", c.master_seed},
       {"grid_points", c.grid_points},
       {"zeta_grid_points", c.zeta_grid_points},
       {"tail_fraction", c.tail_fraction},
       {"theta0", c.theta0},
       {"sampler", c.sampler},
       {"diagnostics", c.diagnostics},
       {"persist_cells", c.persist_cells},
       {"svg", c.svg},
       {"out_dir", c.out_dir}};
}

/// Missing keys keep their defaults. "seeds" may be a list or a count.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  const RunConfig d;
  c.model = j.value("model", d.model);
  c.theta_star = j.value("theta_star", d.theta_star);
  c.half_width = j.value("half_width", d.half_width);
  c.n_list = j.value("n_list", d.n_list);
  c.m_list = j.value("m_list", d.m_list);
  c.schedule = j.value("schedule", d.schedule);
  c.iterations = j.value("iterations", d.iterations);
  c.burn_in = j.value("burn_in", d.burn_in);
  c.gamma = j.value("gamma", d.gamma);
  if (j.contains("seeds") && j.at("seeds").is_number_integer())
    c.seeds = RunConfig::default_seeds(j.at("seeds").get<std::size_t>());
  else
    c.seeds = j.value("seeds", d.seeds);
  c.master_seed = j.value("master_seed", d.master_seed);
  c.grid_points = j.value("grid_points", d.grid_points);
  c.zeta_grid_points = j.value("zeta_grid_points", d.zeta_grid_points);
  c.tail_fraction = j.value("tail_fraction", d.tail_fraction);
  c.theta0 = j.value("theta0", d.theta0);
  c.sampler = j.value("sampler", d.sampler);
  c.diagnostics = j.value("diagnostics", d.diagnostics);
  c.persist_cells = j.value("persist_cells", d.persist_cells);
  c.svg = j.value("svg", d.svg);
  c.out_dir = j.value("out_dir", d.out_dir);
}

/// Parses and validates; any JSON or invariant problem becomes ConfigError.
inline RunConfig parse_config(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    c = j.get<RunConfig>();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Formatting and file helpers

/// Round-trip decimal form; nan/inf spelled out so files stay parseable.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_fmt(const Vector& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += fmt(v(i));
  }
  return s;
}

inline std::string csv_names(const std::string& prefix, std::size_t d) {
  std::string s;
  for (std::size_t i = 1; i <= d; ++i) s += (i > 1 ? "," : "") + prefix + std::to_string(i);
  return s;
}

/// Creates `dir` if needed and proves it writable before any compute starts.
inline void prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw OutputDirError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out || !(out << "ok") || !out.flush())
      throw OutputDirError("output directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OutputDirError("cannot write " + path.string());
  out << text;
  if (!out) throw OutputDirError("write failed for " + path.string());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

/// Header plus rows of doubles; "nan"/"inf" parse via strtod.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("missing CSV column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV " + path.string());
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split(line))
      row.push_back(cell.empty() ? std::nan("") : std::strtod(cell.c_str(), nullptr));
    if (row.size() != t.header.size())
      throw std::runtime_error("ragged CSV row in " + path.string());
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Runs body(i) for i in [0, count) on `workers` threads (0 = hardware
/// concurrency). Indices are claimed in order; the first exception wins.
template <class F>
void parallel_for(std::size_t count, unsigned workers, F&& body) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(count, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count && !failed; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// ---------------------------------------------------------------------------
// Shared setup

/// Everything that depends on the config but not on a cell.
struct ExperimentContext {
  RunConfig config;
  FiniteExpFamily family;
  ParamBox box;
  Vector theta_star;
  ThetaGrid grid;
  LandscapeConstants landscape;
  std::map<int, EmpiricalProcessTable> ep_tables;

  explicit ExperimentContext(const RunConfig& cfg)
      : config(cfg),
        family(family_from_json(cfg.model)),
        box(cfg.half_width, family.dim()),
        theta_star(Eigen::Map<const Vector>(cfg.theta_star.data(),
                                            static_cast<Eigen::Index>(cfg.theta_star.size()))),
        grid(box, cfg.grid_points),
        landscape(estimate_landscape(family, box, theta_star, grid,
                                     ThetaGrid(box, cfg.zeta_grid_points))) {
    const auto points = grid.points();
    for (int m : cfg.m_list)
      if (!ep_tables.count(m)) ep_tables.emplace(m, EmpiricalProcessTable(family, theta_star, m, points));
  }

  TheoryConstants constants(int m, std::size_t n) const {
    return assemble_constants(landscape, m, n, config.gamma);
  }

  Vector theta0() const {
    if (config.theta0.empty()) return Vector::Zero(static_cast<Eigen::Index>(family.dim()));
    return Eigen::Map<const Vector>(config.theta0.data(),
                                    static_cast<Eigen::Index>(config.theta0.size()));
  }

  std::uint64_t data_seed(std::uint64_t seed) const { return hash_words(config.master_seed, seed); }
};

inline std::string cell_name(std::size_t n, int m, std::uint64_t seed) {
  return "n" + std::to_string(n) + "_m" + std::to_string(m) + "_seed" + std::to_string(seed);
}

// ---------------------------------------------------------------------------
// One (n, m, seed) cell

struct CellResult {
  std::size_t n = 0;
  int m = 0;
  std::uint64_t seed = 0;
  std::uint64_t replicate = 0;
  bool mle_found = false;
  Vector theta_hat;  // empty when no MLE exists
  ConstraintResult mle_constraint;
  ConstraintResult ep_constraint;
  DeltaResult delta;
  std::size_t boundary_hits = 0;
  std::vector<double> avg_dist;  // ||theta_bar_t - theta*|| for t = t0..T
  std::string status = "not run";
  bool diagnosed = false;  // drift/martingale/occupancy evaluated
  VerdictSummary bias{"bias", 0, 0};
  VerdictSummary drift{"drift", 0, 0};
  VerdictSummary martingale_y{"martingale_y", 0, 0};
  VerdictSummary martingale_z{"martingale_z", 0, 0};
  bool martingale_bounded = true;
  OccupancyResult occupancy;

  bool constraints_pass() const { return mle_found && mle_constraint.pass && ep_constraint.pass; }
  std::size_t violations() const {
    return bias.violations + drift.violations + martingale_y.violations + martingale_z.violations +
           (diagnosed && !martingale_bounded) + (occupancy.defined && !occupancy.pass);
  }
};

inline nlohmann::json verdicts_json(const CellResult& r) {
  nlohmann::json occ = {{"defined", r.occupancy.defined},
                        {"full_fraction", r.occupancy.full_fraction},
                        {"tail_min", finite_or_null(r.occupancy.tail_min)},
                        {"threshold", r.occupancy.threshold},
                        {"tolerance", r.occupancy.tolerance},
                        {"pass", r.occupancy.pass}};
  return {{"n", r.n},
          {"m", r.m},
          {"seed", r.seed},
          {"status", r.status},
          {"constraints",
           {{"mle_found", r.mle_found},
            {"mle_pass", r.mle_constraint.pass},
            {"mle_margin", finite_or_null(r.mle_constraint.margin)},
            {"empirical_process_pass", r.ep_constraint.pass},
            {"empirical_process_margin", r.ep_constraint.margin}}},
          {"delta_n", r.delta.tail_max},
          {"checks",
           nlohmann::json::array({to_json(r.bias), to_json(r.drift), to_json(r.martingale_y),
                                  to_json(r.martingale_z)})},
          {"martingale_bounded_differences", r.martingale_bounded},
          {"occupancy", occ}};
}

inline std::string trajectory_csv(const Trajectory& traj, const Vector& theta_hat,
                                  const Vector& theta_star) {
  const std::size_t d = static_cast<std::size_t>(traj.thetas.front().size());
  std::string out = "t,eta_t," + csv_names("theta_", d) + ",boundary_hit," +
                    csv_names("thetabar_", d) + ",dist_to_mle,dist_to_true\n";
  const std::string blank_avg = [&] {
    std::string s;
    for (std::size_t i = 0; i < d; ++i) s += (i ? ",nan" : "nan");
    return s;
  }();
  for (std::size_t t = 0; t <= traj.iterations(); ++t) {
    const Vector& th = traj.thetas[t];
    out += std::to_string(t) + ',' + fmt(traj.etas[t]) + ',' + join_fmt(th) + ',' +
           std::to_string(traj.boundary_hits[t]) + ',' +
           (t >= traj.t0 ? join_fmt(traj.average_at(t)) : blank_avg) + ',' +
           fmt(theta_hat.size() ? (th - theta_hat).norm() : std::nan("")) + ',' +
           fmt((th - theta_star).norm()) + '\n';
  }
  return out;
}

inline std::string drift_csv(const std::vector<DriftRow>& rows) {
  std::string out = "t,eta,h,expected_next_h2,rhs,slack,in_layer,in_ball\n";
  for (const auto& r : rows)
    out += std::to_string(r.t) + ',' + fmt(r.eta) + ',' + fmt(r.h) + ',' +
           fmt(r.expected_next_h2) + ',' + fmt(r.rhs) + ',' + fmt(r.slack) + ',' +
           std::to_string(r.in_layer) + ',' + std::to_string(r.in_ball) + '\n';
  return out;
}

inline std::string martingale_csv(const MartingaleReport& rep) {
  std::string out =
      "t,eta,Y,Z,y_active,z_active,y_cond_mean,z_cond_mean,y_ratio,z_ratio\n";
  for (const auto& s : rep.steps)
    out += std::to_string(s.t) + ',' + fmt(s.eta) + ',' + fmt(s.Y) + ',' + fmt(s.Z) + ',' +
           std::to_string(s.y_active) + ',' + std::to_string(s.z_active) + ',' +
           fmt(s.y_cond_mean) + ',' + fmt(s.z_cond_mean) + ',' + fmt(s.y_ratio) + ',' +
           fmt(s.z_ratio) + '\n';
  return out;
}

inline nlohmann::json martingale_summary_json(const MartingaleReport& rep) {
  return {{"y_violations", rep.y_violations},
          {"z_violations", rep.z_violations},
          {"worst_y_mean", finite_or_null(rep.worst_y_mean)},
          {"worst_z_mean", finite_or_null(rep.worst_z_mean)},
          {"y_limsup", finite_or_null(rep.y_limsup)},
          {"z_limsup", finite_or_null(rep.z_limsup)},
          {"h_observed_y", rep.h_observed_y},
          {"h_observed_z", rep.h_observed_z},
          {"h_bound_y", rep.h_bound_y},
          {"h_bound_z", rep.h_bound_z}};
}

/// Bias bound at every grid point; empty summary when the sample fails a
/// constraint (hypotheses unmet, not a violation).
inline VerdictSummary bias_grid_check(const ExperimentContext& ctx, const std::vector<std::size_t>& counts,
                                      std::size_t n, const Vector& theta_hat,
                                      const TheoryConstants& k, const SampleConstraints& sc) {
  VerdictSummary v{"bias", 0, 0};
  for (const auto& theta : ctx.grid.points()) {
    const BiasCheck b = check_bias_bound(ctx.family, theta, counts, n, theta_hat, k, sc);
    ++v.steps;
    v.worst_slack = std::min(v.worst_slack, b.slack);
    if (b.slack < 0.0) ++v.violations;
  }
  return v;
}

/// Drift, martingale and occupancy checks on a finished trajectory. Assumes
/// the constraints passed and a_m > 0. Writes CSVs into `dir` when given.
inline void diagnose_trajectory(const ExperimentContext& ctx, const Trajectory& traj,
                                const std::vector<std::size_t>& counts, const Vector& theta_hat,
                                const TheoryConstants& k, CellResult& r,
                                const fs::path* dir = nullptr) {
  const auto rows = drift_report(ctx.family, ctx.box, traj, counts, traj.n, theta_hat, k);
  r.drift = summarize_drift(rows);
  const auto mart = martingale_increments(ctx.family, ctx.box, traj, counts, traj.n, theta_hat,
                                          k, ctx.config.tail_fraction);
  r.martingale_y = {"martingale_y", 0, mart.y_violations};
  r.martingale_z = {"martingale_z", 0, mart.z_violations};
  for (const auto& s : mart.steps) {
    if (s.y_active) {
      ++r.martingale_y.steps;
      r.martingale_y.worst_slack = std::min(r.martingale_y.worst_slack, -s.y_cond_mean);
    }
    if (s.z_active) {
      ++r.martingale_z.steps;
      r.martingale_z.worst_slack = std::min(r.martingale_z.worst_slack, -s.z_cond_mean);
    }
  }
  r.martingale_bounded = mart.bounded_ok();
  r.occupancy = occupancy_fraction(traj, theta_hat, k, ctx.config.tail_fraction);
  r.diagnosed = true;
  if (dir) {
    write_text(*dir / "drift.csv", drift_csv(rows));
    write_text(*dir / "martingale.csv", martingale_csv(mart));
    write_json(*dir / "martingale_summary.json", martingale_summary_json(mart));
  }
}

/// Constraint checks, bias grid and (when a_m > 0) trajectory diagnostics.
inline void assess_cell(const ExperimentContext& ctx, const Trajectory& traj,
                        const std::vector<std::size_t>& counts, CellResult& r,
                        const fs::path* dir) {
  const std::size_t n = traj.n;
  const TheoryConstants k = ctx.constants(r.m, n);
  r.ep_constraint = ctx.ep_tables.at(r.m).check(counts, n, ctx.config.gamma);
  std::vector<std::size_t> items;
  items.reserve(n);
  for (std::size_t x = 0; x < counts.size(); ++x) items.insert(items.end(), counts[x], x);
  try {
    const MleResult fit = mle(ctx.family, items, ctx.box);
    r.mle_found = true;
    r.theta_hat = fit.theta;
    r.mle_constraint = check_constraint_mle(fit.theta, ctx.theta_star, n, ctx.config.gamma);
  } catch (const MleNotFound&) {
    r.mle_found = false;
    r.mle_constraint = {};
    r.mle_constraint.threshold = std::pow(static_cast<double>(n), ctx.config.gamma);
    r.mle_constraint.value = std::numeric_limits<double>::infinity();
    r.mle_constraint.margin = -std::numeric_limits<double>::infinity();
  }
  if (!ctx.config.diagnostics) {
    r.status = "diagnostics disabled";
    return;
  }
  if (!r.mle_found) {
    r.status = "hypotheses unmet: MLE does not exist";
    return;
  }
  if (!r.constraints_pass()) {
    r.status = "hypotheses unmet: sample fails a data constraint";
    return;
  }
  r.bias = bias_grid_check(ctx, counts, n, r.theta_hat, k, {true, true});
  if (!k.hypotheses_met) {
    r.status = "Theorem hypotheses unmet: a_m <= 0";
    return;
  }
  diagnose_trajectory(ctx, traj, counts, r.theta_hat, k, r, dir);
  r.status = "ok";
}

inline nlohmann::json trajectory_sidecar(const ExperimentContext& ctx, const CellResult& r,
                                         const Trajectory& traj,
                                         const std::vector<std::size_t>& counts) {
  return {{"n", r.n},
          {"m", r.m},
          {"seed", r.seed},
          {"master_seed", ctx.config.master_seed},
          {"data_seed", ctx.data_seed(r.seed)},
          {"replicate", r.replicate},
          {"schedule", ctx.config.schedule},
          {"t0", traj.t0},
          {"iterations", traj.iterations()},
          {"M", ctx.config.half_width},
          {"sampler", ctx.config.sampler},
          {"theta_star", ctx.config.theta_star},
          {"theta_hat", r.mle_found ? nlohmann::json(to_std(r.theta_hat)) : nlohmann::json(nullptr)},
          {"data_counts", counts}};
}

inline CellResult run_cell(const ExperimentContext& ctx, std::size_t n, int m, std::uint64_t seed,
                           const fs::path& out_dir) {
  const RunConfig& cfg = ctx.config;
  CellResult r;
  r.n = n;
  r.m = m;
  r.seed = seed;
  r.replicate = hash_words(n, static_cast<std::uint64_t>(m), seed);
  const DataSample data = sample_iid(ctx.family, ctx.theta_star, n, ctx.data_seed(seed));
  const auto counts = data.counts(ctx.family.num_states());

  CdOptions opt;
  opt.schedule = cfg.schedule;
  opt.m = m;
  opt.iterations = cfg.iterations;
  opt.burn_in = cfg.burn_in;
  opt.theta0 = ctx.theta0();
  opt.sampler = cfg.sampler;
  opt.master_seed = cfg.master_seed;
  opt.replicate = r.replicate;
  Trajectory traj = run_cd(ctx.family, ctx.box, data.items, opt);
  traj.data_id = std::to_string(ctx.data_seed(seed));
  r.delta = delta_n(traj, ctx.theta_star, cfg.tail_fraction);
  r.boundary_hits = traj.hit_count();
  r.avg_dist.reserve(traj.weighted_avgs.size());
  for (const auto& a : traj.weighted_avgs) r.avg_dist.push_back((a - ctx.theta_star).norm());

  fs::path dir;
  if (cfg.persist_cells) {
    dir = out_dir / "cells" / cell_name(n, m, seed);
    fs::create_directories(dir);
  }
  assess_cell(ctx, traj, counts, r, cfg.persist_cells ? &dir : nullptr);
  if (cfg.persist_cells) {
    write_text(dir / "trajectory.csv", trajectory_csv(traj, r.theta_hat, ctx.theta_star));
    write_json(dir / "trajectory.json", trajectory_sidecar(ctx, r, traj, counts));
    write_json(dir / "verdicts.json", verdicts_json(r));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Experiment

struct ExperimentResult {
  RunConfig config;
  LandscapeConstants landscape;
  std::vector<CellResult> cells;  // ordered by n, then m, then seed

  std::vector<const CellResult*> select(std::size_t n, int m) const {
    std::vector<const CellResult*> out;
    for (const auto& c : cells)
      if (c.n == n && c.m == m) out.push_back(&c);
    return out;
  }

  std::size_t total_violations() const {
    std::size_t v = 0;
    for (const auto& c : cells) v += c.violations();
    return v;
  }
};

inline nlohmann::json constants_report(const ExperimentContext& ctx) {
  nlohmann::json list = nlohmann::json::array();
  for (auto n : ctx.config.n_list)
    for (int m : ctx.config.m_list) list.push_back(to_json(ctx.constants(m, n)));
  return list;
}

/// Median ||theta_bar_t - theta*|| against t per (n, m), long format.
inline std::string curves_csv(const ExperimentResult& res) {
  std::string out = "n,m,t,median_dist,q25_dist,q75_dist\n";
  const std::size_t t0 = res.config.burn_in;
  for (auto n : res.config.n_list)
    for (int m : res.config.m_list) {
      const auto cells = res.select(n, m);
      const std::size_t len = cells.front()->avg_dist.size();
      for (std::size_t i = 0; i < len; ++i) {
        std::vector<double> v;
        for (const auto* c : cells) v.push_back(c->avg_dist[i]);
        out += std::to_string(n) + ',' + std::to_string(m) + ',' + std::to_string(t0 + i) + ',' +
               fmt(median(v)) + ',' + fmt(quantile(v, 0.25)) + ',' + fmt(quantile(v, 0.75)) + '\n';
      }
    }
  return out;
}

/// Minimal static line chart of the median curves.
inline std::string curves_svg(const ExperimentResult& res) {
  const double W = 640, H = 400, pad = 50;
  const std::size_t t0 = res.config.burn_in, T = res.config.iterations;
  std::vector<std::pair<std::string, std::vector<double>>> series;
  double ymax = 0.0;
  for (auto n : res.config.n_list)
    for (int m : res.config.m_list) {
      const auto cells = res.select(n, m);
      std::vector<double> med(cells.front()->avg_dist.size());
      for (std::size_t i = 0; i < med.size(); ++i) {
        std::vector<double> v;
        for (const auto* c : cells) v.push_back(c->avg_dist[i]);
        med[i] = median(v);
        ymax = std::max(ymax, med[i]);
      }
      series.emplace_back("n=" + std::to_string(n) + " m=" + std::to_string(m), std::move(med));
    }
  if (!(ymax > 0.0)) ymax = 1.0;
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  char buf[128];
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\">\n";
  out += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                pad, H - pad, W - pad, H - pad);
  out += buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                pad, pad, pad, H - pad);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-size=\"12\">t (%zu..%zu)</text>\n", W / 2, H - 15, t0, T);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"5\" y=\"%g\" font-size=\"12\">max %.3g</text>\n", pad - 5, ymax);
  out += buf;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& [label, ys] = series[s];
    const char* color = colors[s % 8];
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" points=\"";
    const double span = static_cast<double>(std::max<std::size_t>(ys.size() - 1, 1));
    for (std::size_t i = 0; i < ys.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "",
                    pad + (W - 2 * pad) * static_cast<double>(i) / span,
                    H - pad - (H - 2 * pad) * ys[i] / ymax);
      out += buf;
    }
    out += "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"11\" fill=\"%s\">%s</text>\n",
                  W - pad - 110, pad + 14.0 * static_cast<double>(s), color, label.c_str());
    out += buf;
  }
  return out + "</svg>\n";
}

inline void write_experiment_outputs(const ExperimentContext& ctx, const ExperimentResult& res,
                                     const fs::path& out) {
  nlohmann::json cfg = res.config;
  write_json(out / "config.json", cfg);
  write_json(out / "constants.json", constants_report(ctx));

  std::string summary =
      "n,m,seed,delta_n,delta_final,boundary_hits,mle_found,mle_pass,ep_pass,status,violations\n";
  std::string constraints = "seed,n,m,mle_pass,mle_margin,ep_pass,ep_margin\n";
  for (const auto& c : res.cells) {
    summary += std::to_string(c.n) + ',' + std::to_string(c.m) + ',' + std::to_string(c.seed) + ',' +
               fmt(c.delta.tail_max) + ',' + fmt(c.delta.final_value) + ',' +
               std::to_string(c.boundary_hits) + ',' + std::to_string(c.mle_found) + ',' +
               std::to_string(c.mle_constraint.pass) + ',' + std::to_string(c.ep_constraint.pass) +
               ",\"" + c.status + "\"," + std::to_string(c.violations()) + '\n';
    constraints += std::to_string(c.seed) + ',' + std::to_string(c.n) + ',' + std::to_string(c.m) +
                   ',' + std::to_string(c.mle_constraint.pass) + ',' + fmt(c.mle_constraint.margin) +
                   ',' + std::to_string(c.ep_constraint.pass) + ',' + fmt(c.ep_constraint.margin) + '\n';
  }
  write_text(out / "summary.csv", summary);
  write_text(out / "constraints.csv", constraints);

  std::string deltas = "n,m,replicates,median_delta_n,q25_delta_n,q75_delta_n\n";
  for (auto n : res.config.n_list)
    for (int m : res.config.m_list) {
      std::vector<double> v;
      for (const auto* c : res.select(n, m)) v.push_back(c->delta.tail_max);
      deltas += std::to_string(n) + ',' + std::to_string(m) + ',' + std::to_string(v.size()) + ',' +
                fmt(median(v)) + ',' + fmt(quantile(v, 0.25)) + ',' + fmt(quantile(v, 0.75)) + '\n';
    }
  write_text(out / "delta_summary.csv", deltas);
  write_text(out / "curves.csv", curves_csv(res));
  if (res.config.svg) write_text(out / "curves.svg", curves_svg(res));
}

/// The full (n, m, seed) grid. Config and output directory are checked
/// before any compute; cells run in parallel and are merged in fixed order.
inline ExperimentResult run_experiment(const RunConfig& cfg, unsigned workers = 1) {
  cfg.validate();
  const fs::path out = cfg.out_dir;
  prepare_output_dir(out);
  const ExperimentContext ctx(cfg);

  struct Key {
    std::size_t n;
    int m;
    std::uint64_t seed;
  };
  std::vector<Key> keys;
  for (auto n : cfg.n_list)
    for (int m : cfg.m_list)
      for (auto s : cfg.seeds) keys.push_back({n, m, s});

  ExperimentResult res;
  res.config = cfg;
  res.landscape = ctx.landscape;
  res.cells.resize(keys.size());
  if (cfg.persist_cells) fs::create_directories(out / "cells");
  parallel_for(keys.size(), workers, [&](std::size_t i) {
    res.cells[i] = run_cell(ctx, keys[i].n, keys[i].m, keys[i].seed, out);
  });
  write_experiment_outputs(ctx, res, out);
  return res;
}

// ---------------------------------------------------------------------------
// Assumption report

struct AssumptionReport {
  A6Verdict a6;
  IdentifiabilityReport identifiability;
  LandscapeConstants landscape;
  std::vector<TheoryConstants> constants;  // per (n, m) in config order
  int smallest_m_positive = -1;
  int smallest_m_half = -1;
  nlohmann::json json;
};

inline AssumptionReport verify_assumptions(const RunConfig& cfg) {
  cfg.validate();
  const fs::path out = cfg.out_dir;
  prepare_output_dir(out);
  const FiniteExpFamily fam = family_from_json(cfg.model);
  const ParamBox box(cfg.half_width, fam.dim());
  const Vector theta_star = Eigen::Map<const Vector>(
      cfg.theta_star.data(), static_cast<Eigen::Index>(cfg.theta_star.size()));

  AssumptionReport rep;
  rep.a6 = check_a6(cfg.schedule);
  rep.identifiability = check_identifiability(fam, box, 20, cfg.master_seed);
  rep.landscape = estimate_landscape(fam, box, theta_star, ThetaGrid(box, cfg.grid_points),
                                     ThetaGrid(box, cfg.zeta_grid_points));
  rep.smallest_m_positive = smallest_m_for(rep.landscape, 1.0);
  rep.smallest_m_half = smallest_m_for(rep.landscape, 0.5);
  nlohmann::json consts = nlohmann::json::array();
  for (auto n : cfg.n_list)
    for (int m : cfg.m_list) {
      rep.constants.push_back(assemble_constants(rep.landscape, m, n, cfg.gamma));
      consts.push_back(to_json(rep.constants.back()));
    }
  std::vector<int> extra_m;
  if (rep.smallest_m_positive > 0) extra_m.push_back(rep.smallest_m_positive);
  if (rep.smallest_m_half > 0) extra_m.push_back(rep.smallest_m_half);
  nlohmann::json at_smallest = nlohmann::json::array();
  for (int m : extra_m)
    at_smallest.push_back(to_json(assemble_constants(rep.landscape, m, cfg.n_list.back(), cfg.gamma)));

  rep.json = {
      {"a6",
       {{"pass", rep.a6.pass()},
        {"square_summable", rep.a6.square_summable},
        {"partial_sums_outgrow_sqrt_log", rep.a6.outgrows_sqrt_log},
        {"detail", rep.a6.detail}}},
      {"identifiability",
       {{"min_eigenvalue", rep.identifiability.worst_eigenvalue},
        {"degenerate", rep.identifiability.degenerate}}},
      {"bound_C", rep.landscape.C},
      {"smallest_m_positive", rep.smallest_m_positive},
      {"smallest_m_half", rep.smallest_m_half},
      {"constants", consts},
      {"constants_at_smallest_m", at_smallest},
  };
  write_json(out / "assumptions.json", rep.json);
  return rep;
}

// ---------------------------------------------------------------------------
// Rate sweep

struct RateVerdict {
  int m = 0;
  RateFit fit;
  double K_m = 0.0;  // inf when a_m <= 0
  std::vector<std::size_t> n;
  std::vector<double> q25, q75;
  bool monotone = false;  // medians strictly decrease in n
  double median_ratio = 0.0;  // median at the largest n / median at the smallest n
  bool pass() const { return monotone && fit.converging; }
};

struct RateReport {
  ExperimentResult experiment;
  std::vector<RateVerdict> per_m;
  double max_slope_gap = 0.0;  // across m
  bool pass() const {
    return std::all_of(per_m.begin(), per_m.end(), [](const RateVerdict& v) { return v.pass(); });
  }
};

inline RateReport rate_sweep(const RunConfig& cfg, unsigned workers = 1) {
  cfg.validate();
  std::vector<std::size_t> ns = cfg.n_list;
  std::sort(ns.begin(), ns.end());
  if (std::unique(ns.begin(), ns.end()) - ns.begin() < 3 || ns.size() != cfg.n_list.size())
    throw ConfigError("config: rate sweep needs >= 3 distinct n values");
  if (cfg.seeds.size() < 10) throw ConfigError("config: rate sweep needs >= 10 seeds");

  RateReport rep;
  rep.experiment = run_experiment(cfg, workers);
  const fs::path out = cfg.out_dir;
  const double gamma = cfg.gamma;
  std::string table = "m,n,median_delta_n,q25_delta_n,q75_delta_n,rate_bound,coverage\n";
  nlohmann::json fits = nlohmann::json::array();
  for (int m : cfg.m_list) {
    RateVerdict v;
    v.m = m;
    const TheoryConstants k = assemble_constants(rep.experiment.landscape, m, ns.back(), gamma);
    v.K_m = k.K_m;
    std::vector<RateSeries> series;
    for (auto n : ns) {
      RateSeries s{n, {}};
      for (const auto* c : rep.experiment.select(n, m)) s.deltas.push_back(c->delta.tail_max);
      v.q25.push_back(quantile(s.deltas, 0.25));
      v.q75.push_back(quantile(s.deltas, 0.75));
      series.push_back(std::move(s));
      v.n.push_back(n);
    }
    v.fit = rate_fit(series, std::isfinite(v.K_m) ? std::optional<double>(v.K_m) : std::nullopt,
                     gamma);
    v.monotone = true;
    for (std::size_t i = 1; i < v.fit.medians.size(); ++i)
      v.monotone = v.monotone && v.fit.medians[i] < v.fit.medians[i - 1];
    v.median_ratio = v.fit.medians.back() / v.fit.medians.front();
    for (std::size_t i = 0; i < ns.size(); ++i) {
      const double bound =
          v.K_m * std::pow(static_cast<double>(ns[i]), -(1.0 - 2.0 * gamma) / 3.0);
      table += std::to_string(m) + ',' + std::to_string(ns[i]) + ',' + fmt(v.fit.medians[i]) + ',' +
               fmt(v.q25[i]) + ',' + fmt(v.q75[i]) + ',' + fmt(bound) + ',' +
               (v.fit.coverage.empty() ? std::string("nan") : fmt(v.fit.coverage[i])) + '\n';
    }
    fits.push_back({{"m", m},
                    {"slope", v.fit.slope},
                    {"intercept", v.fit.intercept},
                    {"theoretical_slope", -(1.0 - 2.0 * gamma) / 3.0},
                    {"residuals", v.fit.residuals},
                    {"medians", v.fit.medians},
                    {"coverage", v.fit.coverage},
                    {"K_m", finite_or_null(v.K_m)},
                    {"converging", v.fit.converging},
                    {"monotone", v.monotone},
                    {"median_ratio", v.median_ratio},
                    {"pass", v.pass()}});
    rep.per_m.push_back(std::move(v));
  }
  for (const auto& a : rep.per_m)
    for (const auto& b : rep.per_m)
      rep.max_slope_gap = std::max(rep.max_slope_gap, std::abs(a.fit.slope - b.fit.slope));
  write_text(out / "rate_summary.csv", table);
  write_json(out / "rate_fit.json",
             {{"fits", fits}, {"max_slope_gap", rep.max_slope_gap}, {"pass", rep.pass()}});
  return rep;
}

// ---------------------------------------------------------------------------
// Re-diagnosis of stored runs

struct DiagnoseReport {
  std::size_t cells = 0;
  std::size_t diagnosed = 0;
  std::size_t violations = 0;
  std::vector<CellResult> results;
  bool pass() const { return violations == 0; }
};

/// Rebuilds a trajectory from its CSV and sidecar.
inline Trajectory load_trajectory(const fs::path& dir, std::vector<std::size_t>& counts) {
  const nlohmann::json side = read_json(dir / "trajectory.json");
  const CsvTable csv = read_csv(dir / "trajectory.csv");
  Trajectory traj;
  traj.m = side.at("m").get<int>();
  traj.n = side.at("n").get<std::size_t>();
  traj.t0 = side.at("t0").get<std::size_t>();
  traj.seed = side.at("master_seed").get<std::uint64_t>();
  traj.replicate = side.at("replicate").get<std::uint64_t>();
  counts = side.at("data_counts").get<std::vector<std::size_t>>();
  const std::size_t d = side.at("theta_star").size();
  const std::size_t c_eta = csv.column("eta_t"), c_theta = csv.column("theta_1"),
                    c_hit = csv.column("boundary_hit");
  Vector num = Vector::Zero(static_cast<Eigen::Index>(d));
  double den = 0.0;
  for (std::size_t t = 0; t < csv.rows.size(); ++t) {
    const auto& row = csv.rows[t];
    Vector th(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) th(static_cast<Eigen::Index>(j)) = row[c_theta + j];
    traj.thetas.push_back(th);
    traj.etas.push_back(row[c_eta]);
    traj.boundary_hits.push_back(static_cast<std::uint8_t>(row[c_hit] != 0.0));
    if (t >= traj.t0) {
      num += row[c_eta] * th;
      den += row[c_eta];
      traj.weighted_avgs.push_back(num / den);
    }
  }
  return traj;
}

/// Re-runs constraint checks and diagnostics for every stored cell of the
/// run in `run_dir`, writing into run_dir/diagnose.
inline DiagnoseReport diagnose(const fs::path& run_dir, unsigned workers = 1) {
  if (!fs::is_directory(run_dir / "cells"))
    throw ConfigError("no stored cells under " + run_dir.string());
  RunConfig cfg = load_config(run_dir / "config.json");
  cfg.out_dir = run_dir.string();
  const fs::path out = run_dir / "diagnose";
  prepare_output_dir(out);
  const ExperimentContext ctx(cfg);

  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(run_dir / "cells"))
    if (e.is_directory() && fs::exists(e.path() / "trajectory.csv")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());

  DiagnoseReport rep;
  rep.cells = dirs.size();
  rep.results.resize(dirs.size());
  parallel_for(dirs.size(), workers, [&](std::size_t i) {
    std::vector<std::size_t> counts;
    const Trajectory traj = load_trajectory(dirs[i], counts);
    const nlohmann::json side = read_json(dirs[i] / "trajectory.json");
    CellResult& r = rep.results[i];
    r.n = traj.n;
    r.m = traj.m;
    r.seed = side.at("seed").get<std::uint64_t>();
    r.replicate = traj.replicate;
    if (!ctx.ep_tables.count(r.m)) throw ConfigError("stored cell uses m absent from config");
    r.delta = delta_n(traj, ctx.theta_star, cfg.tail_fraction);
    r.boundary_hits = traj.hit_count();
    const fs::path cell_out = out / dirs[i].filename();
    fs::create_directories(cell_out);
    assess_cell(ctx, traj, counts, r, &cell_out);
    write_json(cell_out / "verdicts.json", verdicts_json(r));
  });

  std::string table = "cell,status,diagnosed,violations\n";
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const auto& r = rep.results[i];
    rep.diagnosed += r.diagnosed;
    rep.violations += r.violations();
    table += dirs[i].filename().string() + ",\"" + r.status + "\"," + std::to_string(r.diagnosed) +
             ',' + std::to_string(r.violations()) + '\n';
  }
  write_text(out / "diagnose_summary.csv", table);
  write_json(out / "diagnose.json", {{"cells", rep.cells},
                                     {"diagnosed", rep.diagnosed},
                                     {"violations", rep.violations},
                                     {"pass", rep.pass()}});
  return rep;
}

}  // namespace cdanneal

#endif  // CDANNEAL_HARNESS_HPP
