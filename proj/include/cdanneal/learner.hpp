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

// CD-m with annealed learning rates, the boundary-guarded update, weighted
// iterate averaging and the exact-gradient baseline.

#ifndef CDANNEAL_LEARNER_HPP
#define CDANNEAL_LEARNER_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cdanneal/errors.hpp"
#include "cdanneal/kernel.hpp"
#include "cdanneal/model.hpp"
#include "cdanneal/rng.hpp"

namespace cdanneal {

enum class ScheduleKind { fixed, harmonic, power };

NLOHMANN_JSON_SERIALIZE_ENUM(ScheduleKind, {{ScheduleKind::fixed, "fixed"},
                                            {ScheduleKind::harmonic, "harmonic"},
                                            {ScheduleKind::power, "power"}})

/// Learning-rate schedule indexed from t = 0:
///   fixed     eta_t = eta0
///   harmonic  eta_t = eta0 / (t + 1)
///   power     eta_t = eta0 / (t + 1)^r,  1/2 < r <= 1
struct Schedule {
  ScheduleKind kind = ScheduleKind::harmonic;
  double eta0 = 1.0;
  double exponent = 1.0;

  double eta(std::size_t t) const {
    const double s = static_cast<double>(t) + 1.0;
    switch (kind) {
      case ScheduleKind::fixed: return eta0;
      case ScheduleKind::harmonic: return eta0 / s;
      case ScheduleKind::power: return eta0 / std::pow(s, exponent);
    }
    return eta0;
  }

  void validate() const {
    if (!(eta0 > 0.0) || !std::isfinite(eta0)) throw ConfigError("eta0 must be positive");
    if (kind == ScheduleKind::power && !(exponent > 0.5 && exponent <= 1.0))
      throw ConfigError("power schedule needs exponent in (1/2, 1]");
  }

  bool operator==(const Schedule&) const = default;
};

inline void to_json(nlohmann::json& j, const Schedule& s) {
  j = {{"kind", s.kind}, {"eta0", s.eta0}, {"exponent", s.exponent}};
}

inline void from_json(const nlohmann::json& j, Schedule& s) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "fixed" && kind != "harmonic" && kind != "power")
    throw std::invalid_argument("unknown schedule kind: " + kind);
  s.kind = j.at("kind").get<ScheduleKind>();
  s.eta0 = j.value("eta0", 1.0);
  s.exponent = j.value("exponent", s.kind == ScheduleKind::power ? 0.75 : 1.0);
}

/// Verdict on the step-size condition: sum eta_t^2 < inf and
/// sum_{s<=t} eta_s / sqrt(log t) -> inf. Decided analytically by kind.
struct A6Verdict {
  bool square_summable = false;
  bool outgrows_sqrt_log = false;
  std::string detail;
  bool pass() const { return square_summable && outgrows_sqrt_log; }
};

inline A6Verdict check_a6(const Schedule& s) {
  switch (s.kind) {
    case ScheduleKind::fixed:
      return {false, true, "fails sum eta^2 < inf (constant step)"};
    case ScheduleKind::harmonic:
      return {true, true, "sum 1/(t+1)^2 < inf; partial sums ~ eta0 log t >> sqrt(log t)"};
    case ScheduleKind::power:
      if (s.exponent > 0.5 && s.exponent <= 1.0)
        return {true, true, "2r > 1 gives square summability; partial sums grow like t^(1-r)"};
      return {s.exponent > 0.5, s.exponent <= 1.0, "exponent outside (1/2, 1]"};
  }
  return {};
}

enum class EndpointSampler {
  chain,  // m single Gibbs steps with fresh randomness
  rows,   // one draw from the exact K^m row (same law, O(1) in m)
};

NLOHMANN_JSON_SERIALIZE_ENUM(EndpointSampler, {{EndpointSampler::chain, "chain"},
                                               {EndpointSampler::rows, "rows"}})

/// Empirical mean of phi over a sample of state indices.
inline Vector empirical_mean_phi(const FiniteExpFamily& fam, std::span<const std::size_t> data) {
  if (data.empty()) throw std::invalid_argument("empty data sample");
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(fam.dim()));
  for (std::size_t x : data) {
    if (x >= fam.num_states()) throw std::out_of_range("datum not in the state space");
    sum += fam.phi(x).transpose();
  }
  return sum / static_cast<double>(data.size());
}

/// Endpoints X_i^(m) of the per-datum chains, tallied per state. Stream for
/// datum i is (key.master, key.replicate, key.step, i).
inline std::vector<std::size_t> chain_endpoint_counts(const FiniteExpFamily& fam,
                                                      const GibbsConditionals& cond,
                                                      std::span<const std::size_t> data, int m,
                                                      StreamKey key) {
  std::vector<std::size_t> counts(fam.num_states(), 0);
  const std::size_t p = cond.coords();
  for (std::size_t i = 0; i < data.size(); ++i) {
    key.item = i;
    StreamRng rng(key);
    std::size_t x = data[i];
    for (int k = 0; k < m; ++k) {
      const std::size_t j = rng.below(p);
      const double u = rng.uniform();
      if (u < cond.flip(x, j)) x = cond.target(x, j);
    }
    ++counts[x];
  }
  return counts;
}

inline std::vector<std::size_t> row_endpoint_counts(const KernelMatrix& Km,
                                                    std::span<const std::size_t> data,
                                                    StreamKey key) {
  const auto states = static_cast<std::size_t>(Km.probs.rows());
  Matrix cdf = Km.probs;
  for (Eigen::Index r = 0; r < cdf.rows(); ++r)
    for (Eigen::Index c = 1; c < cdf.cols(); ++c) cdf(r, c) += cdf(r, c - 1);
  std::vector<std::size_t> counts(states, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    key.item = i;
    StreamRng rng(key);
    const double u = rng.uniform() * cdf(static_cast<Eigen::Index>(data[i]),
                                         static_cast<Eigen::Index>(states - 1));
    std::size_t y = 0;
    while (y + 1 < states && cdf(static_cast<Eigen::Index>(data[i]), static_cast<Eigen::Index>(y)) <= u)
      ++y;
    ++counts[y];
  }
  return counts;
}

inline Vector counts_mean_phi(const FiniteExpFamily& fam, const std::vector<std::size_t>& counts,
                              std::size_t n) {
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(fam.dim()));
  for (std::size_t x = 0; x < counts.size(); ++x)
    if (counts[x]) sum += static_cast<double>(counts[x]) * fam.phi(x).transpose();
  return sum / static_cast<double>(n);
}

/// g_cd = (1/n) sum phi(X_i) - (1/n) sum phi(X_i^(m)), each chain started at
/// its datum and run m random-scan Gibbs steps at theta.
inline Vector cd_gradient(const FiniteExpFamily& fam, const Vector& theta,
                          std::span<const std::size_t> data, int m, const StreamKey& key,
                          EndpointSampler sampler = EndpointSampler::chain) {
  if (m < 1) throw std::invalid_argument("CD needs m >= 1");
  const Vector data_mean = empirical_mean_phi(fam, data);
  std::vector<std::size_t> counts;
  if (sampler == EndpointSampler::chain) {
    counts = chain_endpoint_counts(fam, GibbsConditionals(fam, theta), data, m, key);
  } else {
    counts = row_endpoint_counts(kernel_power(build_gibbs_random_scan(fam, theta), m), data, key);
  }
  return data_mean - counts_mean_phi(fam, counts, data.size());
}

struct StepResult {
  Vector theta;
  bool boundary_hit = false;
};

struct CdOptions {
  Schedule schedule;
  int m = 2;
  std::size_t iterations = 1000;  // T
  std::size_t burn_in = 50;       // t0
  Vector theta0;                  // empty = zero vector
  EndpointSampler sampler = EndpointSampler::chain;
  std::uint64_t master_seed = 0;
  std::uint64_t replicate = 0;
};

/// One guarded update theta_{t+1} = theta_t + eta_t g_cd(theta_t) 1(theta_t not in layer_t).
inline StepResult cd_step(const FiniteExpFamily& fam, const ParamBox& box,
                          std::span<const std::size_t> data, const Vector& theta_t,
                          std::size_t t, const CdOptions& opt) {
  const double eta = opt.schedule.eta(t);
  if (boundary_layer_contains(box, theta_t, eta, fam.bound(), fam.dim()))
    return {theta_t, true};
  const StreamKey key{opt.master_seed, opt.replicate, t, 0};
  return {theta_t + eta * cd_gradient(fam, theta_t, data, opt.m, key, opt.sampler), false};
}

/// theta_bar = sum_{s=t0}^{t} eta_s theta_s / sum_{s=t0}^{t} eta_s.
inline Vector weighted_average(std::span<const Vector> thetas, std::span<const double> etas,
                               std::size_t t0, std::size_t t) {
  if (t0 > t || t >= thetas.size() || t >= etas.size())
    throw std::invalid_argument("empty or out-of-range averaging window");
  Vector num = Vector::Zero(thetas[t0].size());
  double den = 0.0;
  for (std::size_t s = t0; s <= t; ++s) {
    num += etas[s] * thetas[s];
    den += etas[s];
  }
  if (!(den > 0.0)) throw std::invalid_argument("averaging weights sum to zero");
  return num / den;
}

/// Record of one CD run. All per-t arrays have length T + 1; the flag at
/// t = T describes the final iterate (no step is taken from it).
struct Trajectory {
  std::vector<Vector> thetas;
  std::vector<double> etas;
  std::vector<std::uint8_t> boundary_hits;
  std::vector<Vector> weighted_avgs;  // theta_bar_t for t = t0..T
  std::uint64_t seed = 0;
  std::uint64_t replicate = 0;
  int m = 0;
  std::size_t n = 0;
  std::size_t t0 = 0;
  std::string data_id;

  std::size_t iterations() const { return thetas.empty() ? 0 : thetas.size() - 1; }

  const Vector& average_at(std::size_t t) const {
    if (t < t0 || t - t0 >= weighted_avgs.size())
      throw std::out_of_range("no weighted average at this t");
    return weighted_avgs[t - t0];
  }

  /// Number of guarded (frozen) steps among t in [from, T).
  std::size_t hit_count(std::size_t from = 0) const {
    std::size_t c = 0;
    for (std::size_t t = from; t < iterations(); ++t) c += boundary_hits[t];
    return c;
  }
};

inline std::size_t tail_start(std::size_t T, double tail_fraction) {
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0))
    throw std::invalid_argument("tail fraction must be in (0, 1]");
  return static_cast<std::size_t>(std::ceil((1.0 - tail_fraction) * static_cast<double>(T) - 1e-9));
}

/// Runs T guarded CD updates. Throws std::logic_error if an iterate leaves the box.
inline Trajectory run_cd(const FiniteExpFamily& fam, const ParamBox& box,
                         std::span<const std::size_t> data, const CdOptions& opt) {
  opt.schedule.validate();
  if (opt.burn_in > opt.iterations) throw std::invalid_argument("burn-in exceeds iterations");
  if (box.dim() != fam.dim()) throw DimensionError("box and model dimensions differ");
  Trajectory traj;
  traj.seed = opt.master_seed;
  traj.replicate = opt.replicate;
  traj.m = opt.m;
  traj.n = data.size();
  traj.t0 = opt.burn_in;
  const std::size_t T = opt.iterations;
  traj.thetas.reserve(T + 1);
  traj.etas.reserve(T + 1);
  traj.boundary_hits.reserve(T + 1);
  Vector theta = opt.theta0.size() ? opt.theta0 : Vector::Zero(static_cast<Eigen::Index>(fam.dim()));
  if (!box.contains(theta)) throw OutsideRegionError("initial parameter outside the box");

  Vector num = Vector::Zero(theta.size());
  double den = 0.0;
  for (std::size_t t = 0;; ++t) {
    const double eta = opt.schedule.eta(t);
    traj.thetas.push_back(theta);
    traj.etas.push_back(eta);
    if (t >= opt.burn_in) {
      num += eta * theta;
      den += eta;
      traj.weighted_avgs.push_back(num / den);
    }
    if (t == T) {
      traj.boundary_hits.push_back(
          boundary_layer_contains(box, theta, eta, fam.bound(), fam.dim()));
      break;
    }
    StepResult step = cd_step(fam, box, data, theta, t, opt);
    traj.boundary_hits.push_back(step.boundary_hit);
    if (!box.contains(step.theta))
      throw std::logic_error("guarded CD update left the parameter box");
    theta = std::move(step.theta);
  }
  return traj;
}

struct DeltaResult {
  double tail_max = 0.0;  // finite-horizon surrogate of limsup ||theta_bar_t - theta*||
  double final_value = 0.0;
  std::size_t window_start = 0;
};

/// `averages[k]` is theta_bar at t = first_t + k.
inline DeltaResult delta_n(std::span<const Vector> averages, std::size_t first_t,
                           const Vector& theta_star, double tail_fraction = 0.1) {
  if (averages.empty()) throw std::invalid_argument("no averages to evaluate");
  const std::size_t T = first_t + averages.size() - 1;
  DeltaResult r;
  r.window_start = std::max(first_t, tail_start(T, tail_fraction));
  for (std::size_t t = r.window_start; t <= T; ++t)
    r.tail_max = std::max(r.tail_max, (averages[t - first_t] - theta_star).norm());
  r.final_value = (averages.back() - theta_star).norm();
  return r;
}

inline DeltaResult delta_n(const Trajectory& traj, const Vector& theta_star,
                           double tail_fraction = 0.1) {
  return delta_n(traj.weighted_avgs, traj.t0, theta_star, tail_fraction);
}

/// theta + eta g(theta), g = data mean - grad Lambda, with the same guard as cd_step.
inline Vector exact_gradient_step(const FiniteExpFamily& fam, const ParamBox& box,
                                  const Vector& theta, const Vector& data_mean, double eta) {
  if (boundary_layer_contains(box, theta, eta, fam.bound(), fam.dim())) return theta;
  return theta + eta * (data_mean - mean_parameter(fam, theta));
}

/// Iterates the exact gradient ascent for `iterations` steps; returns the last iterate.
inline Vector run_exact_gradient(const FiniteExpFamily& fam, const ParamBox& box,
                                 std::span<const std::size_t> data, const Schedule& schedule,
                                 std::size_t iterations, Vector theta) {
  const Vector data_mean = empirical_mean_phi(fam, data);
  for (std::size_t t = 0; t < iterations; ++t)
    theta = exact_gradient_step(fam, box, theta, data_mean, schedule.eta(t));
  return theta;
}

}  // namespace cdanneal

#endif  // CDANNEAL_LEARNER_HPP
