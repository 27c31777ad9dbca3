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

// Ground truth: exact i.i.d. sampling, the Newton MLE, the two sample
// constraints, and the constants entering the convergence bounds.

#ifndef CDANNEAL_ORACLE_HPP
#define CDANNEAL_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cdanneal/errors.hpp"
#include "cdanneal/kernel.hpp"
#include "cdanneal/learner.hpp"
#include "cdanneal/model.hpp"
#include "cdanneal/rng.hpp"

namespace cdanneal {

struct DataSample {
  std::vector<std::size_t> items;
  Vector theta_star;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return items.size(); }

  std::vector<std::size_t> counts(std::size_t num_states) const {
    std::vector<std::size_t> c(num_states, 0);
    for (std::size_t x : items) ++c.at(x);
    return c;
  }
};

/// n exact categorical draws from p_{theta*} by inverse CDF.
inline DataSample sample_iid(const FiniteExpFamily& fam, const Vector& theta_star, std::size_t n,
                             std::uint64_t seed) {
  const Vector p = probabilities(fam, theta_star);
  std::vector<double> cdf(static_cast<std::size_t>(p.size()));
  double acc = 0.0;
  for (std::size_t x = 0; x < cdf.size(); ++x) cdf[x] = (acc += p(static_cast<Eigen::Index>(x)));
  DataSample sample{{}, theta_star, seed};
  sample.items.reserve(n);
  StreamRng rng(StreamKey{seed, 0xda7a, n, 0});
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    sample.items.push_back(std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()),
                                                 cdf.size() - 1));
  }
  return sample;
}

struct MleResult {
  Vector theta;  // unconstrained maximizer
  Vector clipped;  // projection onto the box
  bool inside_box = true;
  int iterations = 0;
  double residual = 0.0;  // ||grad Lambda(theta) - mean phi||
};

/// Solves grad Lambda(theta) = mean phi by Newton with Armijo backtracking on
/// the convex objective Lambda(theta) - theta . mean_phi. Throws MleNotFound
/// when the empirical moments sit on the boundary of the mean-parameter space
/// (detected as a vanishing Fisher eigenvalue) or Newton does not converge.
inline MleResult mle(const FiniteExpFamily& fam, std::span<const std::size_t> data,
                     const ParamBox& box, int max_iterations = 200, double tol = 1e-10) {
  const Vector target = empirical_mean_phi(fam, data);
  auto objective = [&](const Vector& th) { return log_partition(fam, th) - th.dot(target); };
  Vector theta = Vector::Zero(static_cast<Eigen::Index>(fam.dim()));
  double value = objective(theta);
  for (int it = 0; it < max_iterations; ++it) {
    const Vector grad = mean_parameter(fam, theta) - target;
    const FisherInfo info = fisher_info(fam, theta);
    if (grad.norm() < tol) {
      if (info.min_eigenvalue < 1e-9)
        throw MleNotFound("empirical moments lie on the boundary of the mean space");
      MleResult r;
      r.theta = theta;
      r.clipped = box.clamp(theta);
      r.inside_box = box.contains(theta);
      r.iterations = it;
      r.residual = grad.norm();
      return r;
    }
    if (!(info.min_eigenvalue > 1e-14) || theta.cwiseAbs().maxCoeff() > 1e3)
      throw MleNotFound("Newton iterates diverge; no maximizer exists for this sample");
    const Vector dir = -info.cov.ldlt().solve(grad);
    const double slope = grad.dot(dir);
    double step = 1.0;
    Vector next = theta + dir;
    double next_value = objective(next);
    int halvings = 0;
    while (!(next_value <= value + 1e-4 * step * slope) && halvings < 60) {
      step *= 0.5;
      ++halvings;
      next = theta + step * dir;
      next_value = objective(next);
    }
    if (halvings == 60) {
      // No decrease representable in double precision; accept only if converged.
      if (grad.norm() < 1e3 * tol) {
        MleResult r{theta, box.clamp(theta), box.contains(theta), it, grad.norm()};
        return r;
      }
      throw MleNotFound("line search stalled before convergence");
    }
    theta = std::move(next);
    value = next_value;
  }
  throw MleNotFound("Newton did not converge in " + std::to_string(max_iterations) +
                    " iterations");
}

struct ConstraintResult {
  bool pass = false;
  double value = 0.0;      // left-hand side
  double threshold = 0.0;  // n^gamma
  double margin = 0.0;     // threshold - value
  Vector worst_theta;      // empirical-process check only
};

/// sqrt(n) ||theta_hat - theta*|| < n^gamma.
inline ConstraintResult check_constraint_mle(const Vector& theta_hat, const Vector& theta_star,
                                             std::size_t n, double gamma) {
  ConstraintResult r;
  r.threshold = std::pow(static_cast<double>(n), gamma);
  r.value = std::sqrt(static_cast<double>(n)) * (theta_hat - theta_star).norm();
  r.margin = r.threshold - r.value;
  r.pass = r.value < r.threshold;
  return r;
}

inline ConstraintResult check_constraint_mle(const FiniteExpFamily& fam, const DataSample& data,
                                             const ParamBox& box, const Vector& theta_star,
                                             double gamma) {
  return check_constraint_mle(mle(fam, data.items, box).theta, theta_star, data.size(), gamma);
}

/// Per-grid-point tables for the uniform empirical-process constraint:
/// f_theta = K_theta^m phi (one row per start state) and its p_{theta*} mean.
class EmpiricalProcessTable {
 public:
  EmpiricalProcessTable(const FiniteExpFamily& fam, const Vector& theta_star, int m,
                        std::span<const Vector> thetas)
      : thetas_(thetas.begin(), thetas.end()) {
    if (thetas_.empty()) throw std::invalid_argument("empty theta grid");
    const Vector pstar = probabilities(fam, theta_star);
    f_.reserve(thetas_.size());
    expected_.reserve(thetas_.size());
    for (const auto& theta : thetas_) {
      Matrix f = kernel_power(build_gibbs_random_scan(fam, theta), m).probs * fam.suff_stats();
      expected_.push_back(f.transpose() * pstar);
      f_.push_back(std::move(f));
    }
  }

  std::size_t size() const noexcept { return thetas_.size(); }
  const Vector& theta(std::size_t k) const { return thetas_[k]; }

  /// (1/n) sum_i f_theta(x_i) - E_{theta*} f_theta at grid point k.
  Vector deviation(std::size_t k, const std::vector<std::size_t>& counts, std::size_t n) const {
    Vector avg = Vector::Zero(f_[k].cols());
    for (std::size_t x = 0; x < counts.size(); ++x)
      if (counts[x]) avg += static_cast<double>(counts[x]) * f_[k].row(static_cast<Eigen::Index>(x)).transpose();
    return avg / static_cast<double>(n) - expected_[k];
  }

  ConstraintResult check(const std::vector<std::size_t>& counts, std::size_t n,
                         double gamma) const {
    ConstraintResult r;
    r.threshold = std::pow(static_cast<double>(n), gamma);
    const double root_n = std::sqrt(static_cast<double>(n));
    for (std::size_t k = 0; k < thetas_.size(); ++k) {
      const double v = root_n * deviation(k, counts, n).norm();
      if (v > r.value || r.worst_theta.size() == 0) {
        r.value = std::max(r.value, v);
        r.worst_theta = thetas_[k];
      }
    }
    r.margin = r.threshold - r.value;
    r.pass = r.value < r.threshold;
    return r;
  }

 private:
  std::vector<Vector> thetas_;
  std::vector<Matrix> f_;
  std::vector<Vector> expected_;
};

/// sup over the grid of sqrt(n) ||(1/n) sum_i (K^m phi)(x_i) - p_{theta*} K^m phi|| < n^gamma.
inline ConstraintResult check_constraint_empirical_process(const FiniteExpFamily& fam,
                                                           const DataSample& data,
                                                           const Vector& theta_star, int m,
                                                           double gamma,
                                                           const ThetaGrid& grid) {
  const auto points = grid.points();
  const EmpiricalProcessTable table(fam, theta_star, m, points);
  return table.check(data.counts(fam.num_states()), data.size(), gamma);
}

/// sqrt(exp(-2 Lambda(theta*) + Lambda(theta) + Lambda(2 theta* - theta)) - 1):
/// the chi-square distance between p_{theta*} and p_theta. 2 theta* - theta may
/// leave the box; Lambda is finite everywhere on a finite space.
inline double chi_distance(const FiniteExpFamily& fam, const Vector& theta_star,
                           const Vector& theta) {
  const double expo = -2.0 * log_partition(fam, theta_star) + log_partition(fam, theta) +
                      log_partition(fam, 2.0 * theta_star - theta);
  return std::sqrt(std::max(0.0, std::expm1(expo)));
}

/// n- and m-independent quantities estimated on grids over the box.
struct LandscapeConstants {
  double C = 0.0;
  std::size_t d = 0;
  double lambda = 0.0;  // min over grid of smallest Fisher eigenvalue
  Vector lambda_theta;
  double L = 0.0;  // max difference quotient of chi_distance over grid cells
  double alpha = 0.0;  // max over grid of alpha(theta)
  Vector alpha_theta;
  double zeta = 0.0;
  double half_width = 0.0;
  double diameter = 0.0;
  Vector theta_star;
  nlohmann::json grid;
  nlohmann::json zeta_grid;
};

inline LandscapeConstants estimate_landscape(const FiniteExpFamily& fam, const ParamBox& box,
                                             const Vector& theta_star, const ThetaGrid& grid,
                                             const std::optional<ThetaGrid>& zeta_grid = {}) {
  if (!box.contains_interior(theta_star))
    throw OutsideRegionError("theta* must lie strictly inside the box");
  LandscapeConstants c;
  c.C = fam.bound();
  c.d = fam.dim();
  c.half_width = box.half_width();
  c.diameter = box.diameter();
  c.theta_star = theta_star;
  c.grid = grid.metadata();
  const auto points = grid.points();
  c.lambda = std::numeric_limits<double>::infinity();
  std::vector<double> f(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) {
    const double ev = fisher_info(fam, points[k]).min_eigenvalue;
    if (ev < c.lambda) {
      c.lambda = ev;
      c.lambda_theta = points[k];
    }
    const double a = spectral_gap(fam, build_gibbs_random_scan(fam, points[k]));
    if (a > c.alpha || c.alpha_theta.size() == 0) {
      c.alpha = std::max(c.alpha, a);
      c.alpha_theta = points[k];
    }
    f[k] = chi_distance(fam, theta_star, points[k]);
  }
  for (const auto& [a, b] : grid.neighbor_pairs())
    c.L = std::max(c.L, std::abs(f[a] - f[b]) / (points[a] - points[b]).norm());
  const ThetaGrid& zg = zeta_grid ? *zeta_grid : grid;
  c.zeta = estimate_zeta(fam, zg).zeta;
  c.zeta_grid = zg.metadata();
  return c;
}

struct TheoryConstants {
  LandscapeConstants base;
  double gamma = 0.45;
  int m = 1;
  std::size_t n = 1;
  double mixing = 0.0;  // sqrt(d) C L alpha^m
  double a_m = 0.0;
  double b_nm = 0.0;
  double beta = 1.0;
  double ball_radius = 0.0;
  double K_m = 0.0;
  bool hypotheses_met = false;  // a_m > 0
  int smallest_m_positive = -1;  // smallest m with a_m > 0 (-1: none)
  int smallest_m_half = -1;      // smallest m with sqrt(d) C L alpha^m <= lambda / 2

  double rate_bound() const {
    return K_m * std::pow(static_cast<double>(n), -(1.0 - 2.0 * gamma) / 3.0);
  }
  double occupancy_threshold() const {
    const double q = 4.0 * beta * (beta - 1.0);
    return q / (q + 1.0);
  }
};

/// Smallest m >= 1 with sqrt(d) C L alpha^m < fraction * lambda (strict when
/// fraction == 1, non-strict otherwise); -1 if none below `limit`.
inline int smallest_m_for(const LandscapeConstants& c, double fraction, int limit = 1000000) {
  const double scale = std::sqrt(static_cast<double>(c.d)) * c.C * c.L;
  const double target = fraction * c.lambda;
  if (!(target > 0.0)) return -1;
  double term = scale;
  for (int m = 1; m <= limit; ++m) {
    term *= c.alpha;
    if (fraction >= 1.0 ? term < target : term <= target) return m;
    if (term == 0.0) return m;
  }
  return -1;
}

/// a_m = lambda - sqrt(d) C L alpha^m, b_{n,m} = (1 + sqrt(d) C L alpha^m) n^{-1/2+gamma},
/// beta = n^{(1-2 gamma)/6} unless given, radius = beta b / a,
/// K_m = (1 + sqrt(d) C L alpha^m) / a_m + diam / 4.
inline TheoryConstants assemble_constants(const LandscapeConstants& base, int m, std::size_t n,
                                          double gamma, std::optional<double> beta = {}) {
  if (m < 1) throw std::invalid_argument("m must be >= 1");
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  if (!(gamma > 0.0 && gamma < 0.5)) throw std::invalid_argument("gamma must be in (0, 1/2)");
  TheoryConstants t;
  t.base = base;
  t.gamma = gamma;
  t.m = m;
  t.n = n;
  const double nd = static_cast<double>(n);
  t.mixing = std::sqrt(static_cast<double>(base.d)) * base.C * base.L *
             std::pow(base.alpha, static_cast<double>(m));
  t.a_m = base.lambda - t.mixing;
  t.b_nm = (1.0 + t.mixing) * std::pow(nd, -0.5 + gamma);
  t.beta = beta ? *beta : std::pow(nd, (1.0 - 2.0 * gamma) / 6.0);
  t.hypotheses_met = t.a_m > 0.0;
  t.ball_radius = t.hypotheses_met ? t.beta * t.b_nm / t.a_m
                                   : std::numeric_limits<double>::infinity();
  t.K_m = t.hypotheses_met ? (1.0 + t.mixing) / t.a_m + 0.25 * base.diameter
                           : std::numeric_limits<double>::infinity();
  t.smallest_m_positive = smallest_m_for(base, 1.0);
  t.smallest_m_half = smallest_m_for(base, 0.5);
  return t;
}

inline TheoryConstants compute_constants(const FiniteExpFamily& fam, const ParamBox& box,
                                         const Vector& theta_star, int m, std::size_t n,
                                         double gamma, const ThetaGrid& grid,
                                         const std::optional<ThetaGrid>& zeta_grid = {}) {
  return assemble_constants(estimate_landscape(fam, box, theta_star, grid, zeta_grid), m, n,
                            gamma);
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

/// Non-finite values (an infinite radius when a_m <= 0) are written as null.
inline nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const TheoryConstants& t) {
  const auto& b = t.base;
  return {
      {"C", b.C},
      {"d", b.d},
      {"lambda", b.lambda},
      {"lambda_argmin", to_std(b.lambda_theta)},
      {"L", b.L},
      {"alpha", b.alpha},
      {"alpha_argmax", to_std(b.alpha_theta)},
      {"zeta", b.zeta},
      {"half_width", b.half_width},
      {"diameter", b.diameter},
      {"theta_star", to_std(b.theta_star)},
      {"grid", b.grid},
      {"zeta_grid", b.zeta_grid},
      {"gamma", t.gamma},
      {"m", t.m},
      {"n", t.n},
      {"mixing_term", t.mixing},
      {"a_m", t.a_m},
      {"b_nm", t.b_nm},
      {"beta", t.beta},
      {"ball_radius", finite_or_null(t.ball_radius)},
      {"K_m", finite_or_null(t.K_m)},
      {"rate_bound", finite_or_null(t.rate_bound())},
      {"occupancy_threshold", t.occupancy_threshold()},
      {"hypotheses_met", t.hypotheses_met},
      {"status", t.hypotheses_met ? "ok" : "Theorem hypotheses unmet"},
      {"smallest_m_positive", t.smallest_m_positive},
      {"smallest_m_half", t.smallest_m_half},
  };
}

}  // namespace cdanneal

#endif  // CDANNEAL_ORACLE_HPP
