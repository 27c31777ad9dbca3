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

// Exact and long-run checks of the convergence machinery along CD
// trajectories: gradient bias, quadratic drift of h^2 = ||theta - theta_hat||^2,
// the two super-martingales, ball occupancy and the n-rate fit.
//
// All conditional expectations are exact: given theta_t and the data, the n
// chain endpoints are independent with laws given by rows of K_theta^m.

#ifndef CDANNEAL_DIAGNOSTICS_HPP
#define CDANNEAL_DIAGNOSTICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cdanneal/errors.hpp"
#include "cdanneal/kernel.hpp"
#include "cdanneal/learner.hpp"
#include "cdanneal/model.hpp"
#include "cdanneal/oracle.hpp"

namespace cdanneal {

/// Conditional mean and trace-covariance of g_cd given theta and the data.
struct CdMoments {
  Vector mean;
  double trace_cov = 0.0;
};

/// `rows` holds the endpoint law for every start state (K^m, or any
/// row-stochastic surrogate such as p_theta repeated).
inline CdMoments cd_moments_from_rows(const FiniteExpFamily& fam,
                                      const std::vector<std::size_t>& counts, std::size_t n,
                                      const Matrix& rows) {
  const Matrix& phi = fam.suff_stats();
  const Matrix row_mean = rows * phi;                          // E[phi(X^(m)) | x]
  const Vector row_sq = rows * phi.rowwise().squaredNorm();    // E[||phi||^2 | x]
  Vector data_mean = Vector::Zero(phi.cols());
  Vector end_mean = Vector::Zero(phi.cols());
  double trace = 0.0;
  for (std::size_t x = 0; x < counts.size(); ++x) {
    if (!counts[x]) continue;
    const auto xi = static_cast<Eigen::Index>(x);
    const double c = static_cast<double>(counts[x]);
    data_mean += c * phi.row(xi).transpose();
    end_mean += c * row_mean.row(xi).transpose();
    trace += c * (row_sq(xi) - row_mean.row(xi).squaredNorm());
  }
  const double nd = static_cast<double>(n);
  return {(data_mean - end_mean) / nd, trace / (nd * nd)};
}

inline CdMoments exact_cd_moments(const FiniteExpFamily& fam, const Vector& theta,
                                  const std::vector<std::size_t>& counts, std::size_t n, int m) {
  return cd_moments_from_rows(fam, counts, n,
                              kernel_power(build_gibbs_random_scan(fam, theta), m).probs);
}

/// E^x[g_cd(theta)] from K_theta^m rows at the data points; no Monte Carlo.
inline Vector exact_expected_cd_gradient(const FiniteExpFamily& fam, const Vector& theta,
                                         std::span<const std::size_t> data, int m) {
  if (data.empty()) throw std::invalid_argument("empty data sample");
  std::vector<std::size_t> counts(fam.num_states(), 0);
  for (std::size_t x : data) ++counts.at(x);
  return exact_cd_moments(fam, theta, counts, data.size(), m).mean;
}

/// Log-likelihood gradient g(theta) = mean phi(data) - grad Lambda(theta).
inline Vector exact_gradient(const FiniteExpFamily& fam, const Vector& theta,
                             const Vector& data_mean) {
  return data_mean - mean_parameter(fam, theta);
}

/// Outcome of the two sample constraints for one data set.
struct SampleConstraints {
  bool mle = false;
  bool empirical_process = false;
  bool passed() const { return mle && empirical_process; }
};

struct BiasCheck {
  double lhs = 0.0;  // ||E[g_cd - g | theta]||
  double rhs = 0.0;
  double slack = 0.0;
};

/// ||E[g_cd - g | theta]|| <= (1 + sqrt(d) C L alpha^m) n^{-1/2+gamma}
///                             + sqrt(d) C L alpha^m ||theta - theta_hat||.
inline BiasCheck check_bias_bound(const FiniteExpFamily& fam, const Vector& theta,
                                  const std::vector<std::size_t>& counts, std::size_t n,
                                  const Vector& theta_hat, const TheoryConstants& k,
                                  const SampleConstraints& constraints) {
  if (!constraints.passed())
    throw HypothesesUnmet("bias bound requires the sample to pass both data constraints");
  const CdMoments mom = exact_cd_moments(fam, theta, counts, n, k.m);
  const Vector data_mean = counts_mean_phi(fam, counts, n);
  BiasCheck r;
  r.lhs = (mom.mean - exact_gradient(fam, theta, data_mean)).norm();
  r.rhs = (1.0 + k.mixing) * std::pow(static_cast<double>(n), -0.5 + k.gamma) +
          k.mixing * (theta - theta_hat).norm();
  r.slack = r.rhs - r.lhs;
  return r;
}

struct DriftRow {
  std::size_t t = 0;
  double eta = 0.0;
  double h = 0.0;
  double expected_next_h2 = 0.0;  // E[h^2(theta_{t+1}) | theta_t], exact
  double rhs = 0.0;
  double slack = 0.0;
  bool in_layer = false;
  bool in_ball = false;
};

/// E[h^2(theta_{t+1}) | theta_t] = ||theta_t + eta gbar - theta_hat||^2 + eta^2 tr Cov[g_cd]
/// (or h^2 on a frozen step), against
/// h^2 - 2 eta [a_m h^2 - b_{n,m} h] 1(not in layer) + 4 d eta^2 C^2.
inline DriftRow check_drift(const FiniteExpFamily& fam, const ParamBox& box, const Vector& theta,
                            double eta, const std::vector<std::size_t>& counts, std::size_t n,
                            const Vector& theta_hat, const TheoryConstants& k, std::size_t t = 0) {
  DriftRow row;
  row.t = t;
  row.eta = eta;
  row.h = (theta - theta_hat).norm();
  const double h2 = row.h * row.h;
  row.in_layer = boundary_layer_contains(box, theta, eta, fam.bound(), fam.dim());
  row.in_ball = k.hypotheses_met && row.h <= k.ball_radius;
  if (row.in_layer) {
    row.expected_next_h2 = h2;
  } else {
    const CdMoments mom = exact_cd_moments(fam, theta, counts, n, k.m);
    row.expected_next_h2 = (theta + eta * mom.mean - theta_hat).squaredNorm() +
                           eta * eta * mom.trace_cov;
  }
  const double C = fam.bound();
  const double d = static_cast<double>(fam.dim());
  row.rhs = h2 - (row.in_layer ? 0.0 : 2.0 * eta * (k.a_m * h2 - k.b_nm * row.h)) +
            4.0 * d * eta * eta * C * C;
  row.slack = row.rhs - row.expected_next_h2;
  return row;
}

inline std::vector<DriftRow> drift_report(const FiniteExpFamily& fam, const ParamBox& box,
                                          const Trajectory& traj,
                                          const std::vector<std::size_t>& counts, std::size_t n,
                                          const Vector& theta_hat, const TheoryConstants& k) {
  if (traj.m != k.m) throw std::invalid_argument("constants were assembled for another m");
  std::vector<DriftRow> rows;
  rows.reserve(traj.iterations());
  for (std::size_t t = 0; t < traj.iterations(); ++t)
    rows.push_back(check_drift(fam, box, traj.thetas[t], traj.etas[t], counts, n, theta_hat, k, t));
  return rows;
}

struct VerdictSummary {
  std::string check;
  std::size_t steps = 0;
  std::size_t violations = 0;
  double worst_slack = std::numeric_limits<double>::infinity();
};

inline nlohmann::json to_json(const VerdictSummary& v) {
  return {{"check", v.check},
          {"steps", v.steps},
          {"violations", v.violations},
          {"worst_slack", finite_or_null(v.worst_slack)}};
}

inline VerdictSummary summarize_drift(const std::vector<DriftRow>& rows, double tol = 1e-10) {
  VerdictSummary v{"drift", rows.size(), 0};
  for (const auto& r : rows) {
    v.worst_slack = std::min(v.worst_slack, r.slack);
    if (r.slack < -tol) ++v.violations;
  }
  return v;
}

struct MartingaleStep {
  std::size_t t = 0;
  double eta = 0.0;
  double Y = 0.0;  // Y_{t+1}
  double Z = 0.0;  // Z_{t+1}
  bool y_active = false;  // theta_t outside layer and outside B
  bool z_active = false;  // theta_t in layer or in B
  double y_cond_mean = 0.0;  // E[Y_{t+1} | theta_t]
  double z_cond_mean = 0.0;
  double y_ratio = 0.0;  // sum_{s<=t} Y 1(.) / sum_{s<=t} eta_s
  double z_ratio = 0.0;
};

struct MartingaleReport {
  std::vector<MartingaleStep> steps;
  std::size_t y_violations = 0;  // active steps with E[Y 1(.) | theta_t] > tol
  std::size_t z_violations = 0;
  double worst_y_mean = -std::numeric_limits<double>::infinity();
  double worst_z_mean = -std::numeric_limits<double>::infinity();
  double y_limsup = -std::numeric_limits<double>::infinity();  // tail max of y_ratio
  double z_limsup = -std::numeric_limits<double>::infinity();
  double h_observed_y = 0.0;  // max |Y 1(.)| / eta
  double h_observed_z = 0.0;
  double h_bound_y = 0.0;  // analytic bounded-difference constants
  double h_bound_z = 0.0;

  bool signs_ok() const { return y_violations == 0 && z_violations == 0; }
  bool bounded_ok() const { return h_observed_y <= h_bound_y && h_observed_z <= h_bound_z; }
};

/// Y_{t+1} = h^2(theta_{t+1}) - h^2(theta_t) + 2 eta beta (beta-1) b^2 / a - 4 d eta^2 C^2
/// Z_{t+1} = h^2(theta_{t+1}) - h^2(theta_t) - eta b^2 / (2a) - 4 d eta^2 C^2
/// Both indicator-weighted partial sums are super-martingales: the exact
/// conditional mean of each active increment must be <= tol.
inline MartingaleReport martingale_increments(const FiniteExpFamily& fam, const ParamBox& box,
                                              const Trajectory& traj,
                                              const std::vector<std::size_t>& counts,
                                              std::size_t n, const Vector& theta_hat,
                                              const TheoryConstants& k, double tail_fraction = 0.1,
                                              double tol = 1e-10) {
  if (!k.hypotheses_met) throw HypothesesUnmet("a_m <= 0: the ball B is undefined");
  if (traj.m != k.m) throw std::invalid_argument("constants were assembled for another m");
  const double C = fam.bound();
  const double d = static_cast<double>(fam.dim());
  const double b2a = k.b_nm * k.b_nm / k.a_m;
  const std::size_t T = traj.iterations();
  const std::size_t tail = tail_start(T, tail_fraction);

  MartingaleReport rep;
  rep.steps.reserve(T);
  double sum_y = 0.0, sum_z = 0.0, sum_eta = 0.0, eta_max = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    MartingaleStep s;
    s.t = t;
    s.eta = traj.etas[t];
    eta_max = std::max(eta_max, s.eta);
    const double h2 = (traj.thetas[t] - theta_hat).squaredNorm();
    const double h2_next = (traj.thetas[t + 1] - theta_hat).squaredNorm();
    const double noise = 4.0 * d * s.eta * s.eta * C * C;
    const double cy = 2.0 * s.eta * k.beta * (k.beta - 1.0) * b2a - noise;
    const double cz = -s.eta * b2a / 2.0 - noise;
    s.Y = h2_next - h2 + cy;
    s.Z = h2_next - h2 + cz;

    const DriftRow drift =
        check_drift(fam, box, traj.thetas[t], s.eta, counts, n, theta_hat, k, t);
    s.y_active = !drift.in_layer && !drift.in_ball;
    s.z_active = drift.in_layer || drift.in_ball;
    s.y_cond_mean = drift.expected_next_h2 - h2 + cy;
    s.z_cond_mean = drift.expected_next_h2 - h2 + cz;
    if (s.y_active) {
      rep.worst_y_mean = std::max(rep.worst_y_mean, s.y_cond_mean);
      if (s.y_cond_mean > tol) ++rep.y_violations;
      rep.h_observed_y = std::max(rep.h_observed_y, std::abs(s.Y) / s.eta);
    }
    if (s.z_active) {
      rep.worst_z_mean = std::max(rep.worst_z_mean, s.z_cond_mean);
      if (s.z_cond_mean > tol) ++rep.z_violations;
      rep.h_observed_z = std::max(rep.h_observed_z, std::abs(s.Z) / s.eta);
    }
    sum_y += s.y_active ? s.Y : 0.0;
    sum_z += s.z_active ? s.Z : 0.0;
    sum_eta += s.eta;
    s.y_ratio = sum_y / sum_eta;
    s.z_ratio = sum_z / sum_eta;
    if (t + 1 >= tail) {
      rep.y_limsup = std::max(rep.y_limsup, s.y_ratio);
      rep.z_limsup = std::max(rep.z_limsup, s.z_ratio);
    }
    rep.steps.push_back(s);
  }
  // |h^2' - h^2| <= 2 eta ||g_cd|| h_max + eta^2 ||g_cd||^2, ||g_cd|| <= 2 sqrt(d) C.
  const double h_max = std::max(box.max_distance_from(theta_hat),
                                (theta_hat - box.clamp(theta_hat)).norm());
  const double move = 4.0 * std::sqrt(d) * C * h_max + 4.0 * d * C * C * eta_max;
  rep.h_bound_y = move + 2.0 * k.beta * (k.beta - 1.0) * b2a + 4.0 * d * C * C * eta_max;
  rep.h_bound_z = move + b2a / 2.0 + 4.0 * d * C * C * eta_max;
  return rep;
}

struct OccupancyResult {
  bool defined = false;  // false when a_m <= 0 (B undefined)
  double full_fraction = 0.0;
  double tail_min = 0.0;  // liminf surrogate: min prefix fraction over the tail
  double threshold = 0.0;  // 4 beta (beta-1) / (4 beta (beta-1) + 1)
  double tolerance = 0.05;
  bool pass = false;
};

/// eta-weighted fraction of time in (layer_t ∪ B).
inline OccupancyResult occupancy_fraction(const Trajectory& traj, const Vector& theta_hat,
                                          const TheoryConstants& k, double tail_fraction = 0.1,
                                          double tolerance = 0.05) {
  OccupancyResult r;
  r.threshold = k.occupancy_threshold();
  r.tolerance = tolerance;
  if (!k.hypotheses_met) return r;
  r.defined = true;
  const std::size_t T = traj.iterations();
  const std::size_t tail = tail_start(T, tail_fraction);
  double inside = 0.0, total = 0.0;
  r.tail_min = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s <= T; ++s) {
    const bool in_ball = (traj.thetas[s] - theta_hat).norm() <= k.ball_radius;
    if (traj.boundary_hits[s] || in_ball) inside += traj.etas[s];
    total += traj.etas[s];
    if (s >= tail) r.tail_min = std::min(r.tail_min, inside / total);
  }
  r.full_fraction = inside / total;
  r.pass = r.tail_min >= r.threshold - tolerance;
  return r;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

struct RateSeries {
  std::size_t n = 0;
  std::vector<double> deltas;
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> residuals;  // log median - fitted, per series
  std::vector<double> medians;
  std::vector<double> coverage;  // fraction with delta < K_m n^{-(1-2 gamma)/3}
  bool converging = false;  // slope < -0.05
};

/// Least squares of log(median delta_n) on log n. K_m and gamma, when given,
/// add the coverage fractions.
inline RateFit rate_fit(std::span<const RateSeries> series, std::optional<double> K_m = {},
                        double gamma = 0.45, std::size_t min_replicates = 10) {
  std::vector<std::size_t> ns;
  for (const auto& s : series) {
    if (s.deltas.size() < min_replicates)
      throw std::invalid_argument("rate fit needs >= " + std::to_string(min_replicates) +
                                  " replicates per n");
    ns.push_back(s.n);
  }
  std::sort(ns.begin(), ns.end());
  if (std::unique(ns.begin(), ns.end()) - ns.begin() < 3)
    throw std::invalid_argument("rate fit needs >= 3 distinct n values");
  RateFit fit;
  std::vector<double> x, y;
  for (const auto& s : series) {
    const double med = median(s.deltas);
    if (!(med > 0.0)) throw std::domain_error("degenerate rate fit: median delta_n is zero");
    fit.medians.push_back(med);
    x.push_back(std::log(static_cast<double>(s.n)));
    y.push_back(std::log(med));
    if (K_m) {
      const double bound = *K_m * std::pow(static_cast<double>(s.n), -(1.0 - 2.0 * gamma) / 3.0);
      const auto hits = std::count_if(s.deltas.begin(), s.deltas.end(),
                                      [&](double v) { return v < bound; });
      fit.coverage.push_back(static_cast<double>(hits) / static_cast<double>(s.deltas.size()));
    }
  }
  const double k = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / k;
    my += y[i] / k;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  for (std::size_t i = 0; i < x.size(); ++i)
    fit.residuals.push_back(y[i] - (fit.intercept + fit.slope * x[i]));
  fit.converging = fit.slope < -0.05;
  return fit;
}

}  // namespace cdanneal

#endif  // CDANNEAL_DIAGNOSTICS_HPP
