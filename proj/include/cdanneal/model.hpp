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

// Exponential families p_theta(x) = c(x) exp(theta . phi(x) - Lambda(theta))
// over an explicitly enumerated finite state space, with exact moments.

#ifndef CDANNEAL_MODEL_HPP
#define CDANNEAL_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cdanneal/errors.hpp"
#include "cdanneal/rng.hpp"

namespace cdanneal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using State = std::vector<int>;

inline constexpr int kMaxFvbmSize = 12;

class FiniteExpFamily {
 public:
  FiniteExpFamily(std::vector<State> states, Matrix suff_stats, Vector log_carrier)
      : states_(std::move(states)),
        suff_stats_(std::move(suff_stats)),
        log_carrier_(std::move(log_carrier)) {
    if (states_.empty()) throw DimensionError("state space is empty");
    if (static_cast<std::size_t>(suff_stats_.rows()) != states_.size())
      throw DimensionError("phi must have one row per state");
    if (static_cast<std::size_t>(log_carrier_.size()) != states_.size())
      throw DimensionError("log_carrier must have one entry per state");
    if (suff_stats_.cols() == 0) throw DimensionError("phi has no columns");
    if (!suff_stats_.allFinite() || !log_carrier_.allFinite())
      throw DimensionError("phi and log_carrier must be finite");
    const std::size_t coords = states_.front().size();
    for (std::size_t x = 0; x < states_.size(); ++x) {
      if (states_[x].size() != coords)
        throw DimensionError("all states must have the same number of coordinates");
      if (!index_.emplace(states_[x], x).second)
        throw DimensionError("duplicate state in state list");
    }
    bound_ = suff_stats_.cwiseAbs().maxCoeff();
  }

  std::size_t num_states() const noexcept { return states_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(suff_stats_.cols()); }
  std::size_t num_coords() const noexcept { return states_.front().size(); }

  const std::vector<State>& states() const noexcept { return states_; }
  const Matrix& suff_stats() const noexcept { return suff_stats_; }
  const Vector& log_carrier() const noexcept { return log_carrier_; }

  /// C = max_j max_x |phi_j(x)|.
  double bound() const noexcept { return bound_; }

  auto phi(std::size_t x) const { return suff_stats_.row(static_cast<Eigen::Index>(x)); }

  std::optional<std::size_t> index_of(const State& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool is_binary() const {
    return std::all_of(states_.begin(), states_.end(), [](const State& s) {
      return std::all_of(s.begin(), s.end(), [](int v) { return v == 0 || v == 1; });
    });
  }

  void check_theta(const Vector& theta) const {
    if (static_cast<std::size_t>(theta.size()) != dim())
      throw DimensionError("parameter has length " + std::to_string(theta.size()) +
                           ", model dimension is " + std::to_string(dim()));
  }

 private:
  std::vector<State> states_;
  Matrix suff_stats_;
  Vector log_carrier_;
  std::map<State, std::size_t> index_;
  double bound_ = 0.0;
};

/// log c(x) + theta . phi(x) for every state.
inline Vector log_weights(const FiniteExpFamily& fam, const Vector& theta) {
  fam.check_theta(theta);
  return fam.log_carrier() + fam.suff_stats() * theta;
}

inline double log_sum_exp(const Vector& a) {
  const double top = a.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((a.array() - top).exp().sum());
}

inline double log_partition(const FiniteExpFamily& fam, const Vector& theta) {
  return log_sum_exp(log_weights(fam, theta));
}

inline Vector probabilities(const FiniteExpFamily& fam, const Vector& theta) {
  Vector a = log_weights(fam, theta);
  const double top = a.maxCoeff();
  Vector w = (a.array() - top).exp();
  return w / w.sum();
}

/// E_theta[phi] = grad Lambda(theta).
inline Vector mean_parameter(const FiniteExpFamily& fam, const Vector& theta) {
  return fam.suff_stats().transpose() * probabilities(fam, theta);
}

struct FisherInfo {
  Matrix cov;
  double min_eigenvalue = 0.0;
};

/// Cov_theta[phi] = Hessian of Lambda, with its smallest eigenvalue.
inline FisherInfo fisher_info(const FiniteExpFamily& fam, const Vector& theta) {
  const Vector p = probabilities(fam, theta);
  const Vector mu = fam.suff_stats().transpose() * p;
  const Matrix centered = fam.suff_stats().rowwise() - mu.transpose();
  Matrix cov = centered.transpose() * p.asDiagonal() * centered;
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
  return {std::move(cov), eig.eigenvalues().minCoeff()};
}

/// Position of the sufficient statistic x_j x_k (j <= k) in the FVBM
/// parameter vector. Row-major upper triangle: (x1^2, x1x2, .., x1xp, x2^2, ..).
inline std::size_t fvbm_index(int p, int j, int k) {
  if (j > k) std::swap(j, k);
  return static_cast<std::size_t>(j * p - j * (j - 1) / 2 + (k - j));
}

/// Fully-visible Boltzmann machine p(x) ∝ exp(x^T W x) on {0,1}^p with
/// theta = (W_jj, 2 W_jk) laid out as in fvbm_index. States are listed in
/// lexicographic order (first coordinate most significant).
inline FiniteExpFamily build_fvbm(int p) {
  if (p < 1 || p > kMaxFvbmSize)
    throw std::out_of_range("FVBM size p=" + std::to_string(p) + " outside [1, " +
                            std::to_string(kMaxFvbmSize) + "]");
  const std::size_t count = std::size_t{1} << p;
  const std::size_t d = static_cast<std::size_t>(p * (p + 1) / 2);
  std::vector<State> states(count, State(static_cast<std::size_t>(p)));
  Matrix phi(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(d));
  for (std::size_t x = 0; x < count; ++x) {
    for (int j = 0; j < p; ++j)
      states[x][static_cast<std::size_t>(j)] = static_cast<int>((x >> (p - 1 - j)) & 1U);
    for (int j = 0; j < p; ++j)
      for (int k = j; k < p; ++k)
        phi(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(fvbm_index(p, j, k))) =
            states[x][static_cast<std::size_t>(j)] * states[x][static_cast<std::size_t>(k)];
  }
  return FiniteExpFamily(std::move(states), std::move(phi),
                         Vector::Zero(static_cast<Eigen::Index>(count)));
}

/// {"type":"fvbm","p":2} or {"states":[[..]..],"phi":[[..]..],"log_carrier":[..]}.
/// log_carrier may be omitted (counting measure).
inline FiniteExpFamily family_from_json(const nlohmann::json& doc) {
  try {
    if (doc.contains("type")) {
      const auto type = doc.at("type").get<std::string>();
      if (type != "fvbm") throw ConfigError("unknown model type '" + type + "'");
      return build_fvbm(doc.at("p").get<int>());
    }
    const auto states = doc.at("states").get<std::vector<State>>();
    const auto rows = doc.at("phi").get<std::vector<std::vector<double>>>();
    if (rows.size() != states.size() || rows.empty())
      throw ConfigError("phi must have one row per state");
    Matrix phi(static_cast<Eigen::Index>(rows.size()),
               static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t x = 0; x < rows.size(); ++x) {
      if (rows[x].size() != rows.front().size()) throw ConfigError("ragged phi matrix");
      for (std::size_t j = 0; j < rows[x].size(); ++j)
        phi(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(j)) = rows[x][j];
    }
    Vector carrier = Vector::Zero(static_cast<Eigen::Index>(states.size()));
    if (doc.contains("log_carrier")) {
      const auto lc = doc.at("log_carrier").get<std::vector<double>>();
      if (lc.size() != states.size()) throw ConfigError("log_carrier length mismatch");
      carrier = Eigen::Map<const Vector>(lc.data(), static_cast<Eigen::Index>(lc.size()));
    }
    return FiniteExpFamily(states, std::move(phi), std::move(carrier));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model document: ") + e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("model document: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(std::string("model document: ") + e.what());
  }
}

/// Theta = [-M, M]^d.
class ParamBox {
 public:
  ParamBox(double half_width, std::size_t dim) : half_width_(half_width), dim_(dim) {
    if (!(half_width > 0.0) || !std::isfinite(half_width))
      throw std::invalid_argument("box half-width must be positive and finite");
    if (dim == 0) throw DimensionError("box dimension must be positive");
  }

  double half_width() const noexcept { return half_width_; }
  std::size_t dim() const noexcept { return dim_; }

  bool contains(const Vector& theta) const {
    check(theta);
    return theta.cwiseAbs().maxCoeff() <= half_width_;
  }
  bool contains_interior(const Vector& theta) const {
    check(theta);
    return theta.cwiseAbs().maxCoeff() < half_width_;
  }

  /// Euclidean distance to the box boundary, for theta inside the box.
  double boundary_distance(const Vector& theta) const {
    check(theta);
    return half_width_ - theta.cwiseAbs().maxCoeff();
  }

  double diameter() const noexcept {
    return 2.0 * half_width_ * std::sqrt(static_cast<double>(dim_));
  }

  /// max over the box of ||theta - center||; attained at a corner.
  double max_distance_from(const Vector& center) const {
    check(center);
    return (center.cwiseAbs().array() + half_width_).matrix().norm();
  }

  Vector clamp(const Vector& theta) const {
    check(theta);
    return theta.cwiseMax(-half_width_).cwiseMin(half_width_);
  }

 private:
  void check(const Vector& theta) const {
    if (static_cast<std::size_t>(theta.size()) != dim_)
      throw DimensionError("parameter length does not match box dimension");
  }

  double half_width_;
  std::size_t dim_;
};

/// True iff theta lies in the boundary layer
/// {theta in Theta : dist(theta, boundary) <= 2 eta sqrt(d) C}.
inline bool boundary_layer_contains(const ParamBox& box, const Vector& theta, double eta,
                                    double C, std::size_t d) {
  if (!box.contains(theta)) throw OutsideRegionError("parameter outside the box");
  return box.boundary_distance(theta) <= 2.0 * eta * std::sqrt(static_cast<double>(d)) * C;
}

/// Regular grid over a box, `points_per_axis` values per coordinate
/// including both faces. Points are enumerated with the last axis fastest.
class ThetaGrid {
 public:
  ThetaGrid(ParamBox box, int points_per_axis) : box_(box), per_axis_(points_per_axis) {
    if (points_per_axis < 2) throw std::invalid_argument("grid needs >= 2 points per axis");
    double total = std::pow(static_cast<double>(per_axis_), static_cast<double>(box.dim()));
    if (total > 5e6) throw std::invalid_argument("grid too large to enumerate");
    size_ = static_cast<std::size_t>(total);
  }

  const ParamBox& box() const noexcept { return box_; }
  int points_per_axis() const noexcept { return per_axis_; }
  std::size_t size() const noexcept { return size_; }
  double spacing() const noexcept { return 2.0 * box_.half_width() / (per_axis_ - 1); }

  Vector point(std::size_t index) const {
    Vector theta(static_cast<Eigen::Index>(box_.dim()));
    for (std::size_t j = box_.dim(); j-- > 0;) {
      const auto k = static_cast<int>(index % static_cast<std::size_t>(per_axis_));
      index /= static_cast<std::size_t>(per_axis_);
      theta(static_cast<Eigen::Index>(j)) = coordinate(k);
    }
    return theta;
  }

  std::vector<Vector> points() const {
    std::vector<Vector> out;
    out.reserve(size_);
    for (std::size_t i = 0; i < size_; ++i) out.push_back(point(i));
    return out;
  }

  /// Every unordered pair of points that share a grid cell: offsets in
  /// {-1,0,1}^d whose first non-zero entry is +1.
  std::vector<std::pair<std::size_t, std::size_t>> neighbor_pairs() const {
    const std::size_t d = box_.dim();
    std::vector<std::vector<int>> offsets;
    std::vector<int> off(d, -1);
    while (true) {
      auto first = std::find_if(off.begin(), off.end(), [](int v) { return v != 0; });
      if (first != off.end() && *first == 1) offsets.push_back(off);
      std::size_t j = d;
      while (j-- > 0) {
        if (off[j] < 1) {
          ++off[j];
          break;
        }
        off[j] = -1;
      }
      if (j == static_cast<std::size_t>(-1)) break;
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<int> digits(d);
    for (std::size_t i = 0; i < size_; ++i) {
      std::size_t rest = i;
      for (std::size_t j = d; j-- > 0;) {
        digits[j] = static_cast<int>(rest % static_cast<std::size_t>(per_axis_));
        rest /= static_cast<std::size_t>(per_axis_);
      }
      for (const auto& o : offsets) {
        std::size_t other = 0;
        bool ok = true;
        for (std::size_t j = 0; j < d && ok; ++j) {
          const int k = digits[j] + o[j];
          ok = k >= 0 && k < per_axis_;
          other = other * static_cast<std::size_t>(per_axis_) + static_cast<std::size_t>(k);
        }
        if (ok) pairs.emplace_back(i, other);
      }
    }
    return pairs;
  }

  nlohmann::json metadata() const {
    return {{"half_width", box_.half_width()},
            {"points_per_axis", per_axis_},
            {"points", size_},
            {"spacing", spacing()}};
  }

 private:
  double coordinate(int k) const {
    return -box_.half_width() + 2.0 * box_.half_width() * k / (per_axis_ - 1);
  }

  ParamBox box_;
  int per_axis_;
  std::size_t size_ = 0;
};

struct IdentifiabilityReport {
  bool degenerate = false;
  double worst_eigenvalue = std::numeric_limits<double>::infinity();
  Vector worst_theta;
  std::size_t probes = 0;
};

/// Probes the smallest Fisher eigenvalue at theta = 0 and at random points of
/// the box; flags the family when any falls below `threshold`.
inline IdentifiabilityReport check_identifiability(const FiniteExpFamily& fam,
                                                   const ParamBox& box, int probes = 20,
                                                   std::uint64_t seed = 0,
                                                   double threshold = 1e-10) {
  IdentifiabilityReport report;
  StreamRng rng(hash_words(seed, 0xa3));
  auto probe = [&](const Vector& theta) {
    const double ev = fisher_info(fam, theta).min_eigenvalue;
    ++report.probes;
    if (ev < report.worst_eigenvalue) {
      report.worst_eigenvalue = ev;
      report.worst_theta = theta;
    }
  };
  probe(Vector::Zero(static_cast<Eigen::Index>(fam.dim())));
  for (int i = 0; i < probes; ++i) {
    Vector theta(static_cast<Eigen::Index>(fam.dim()));
    for (auto& v : theta) v = box.half_width() * (2.0 * rng.uniform() - 1.0);
    probe(theta);
  }
  report.degenerate = report.worst_eigenvalue < threshold;
  return report;
}

}  // namespace cdanneal

#endif  // CDANNEAL_MODEL_HPP
