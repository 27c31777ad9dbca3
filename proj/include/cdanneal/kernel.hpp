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

// Random-scan Gibbs kernels as explicit row-stochastic matrices.

#ifndef CDANNEAL_KERNEL_HPP
#define CDANNEAL_KERNEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdanneal/errors.hpp"
#include "cdanneal/model.hpp"

namespace cdanneal {

inline constexpr std::size_t kNoState = std::numeric_limits<std::size_t>::max();

/// Single-site heat-bath moves at a fixed theta. For state x and coordinate j,
/// `target(x, j)` is x with coordinate j flipped (kNoState if that point is not
/// in the state space) and `flip(x, j)` the exact conditional probability of
/// moving there.
class GibbsConditionals {
 public:
  GibbsConditionals(const FiniteExpFamily& fam, const Vector& theta)
      : coords_(fam.num_coords()),
        targets_(fam.num_states() * coords_, kNoState),
        flip_(fam.num_states() * coords_, 0.0) {
    if (!fam.is_binary()) throw std::invalid_argument("Gibbs kernel needs binary coordinates");
    const Vector a = log_weights(fam, theta);
    const auto& states = fam.states();
    State neighbor;
    for (std::size_t x = 0; x < states.size(); ++x) {
      for (std::size_t j = 0; j < coords_; ++j) {
        neighbor = states[x];
        neighbor[j] = 1 - neighbor[j];
        const auto y = fam.index_of(neighbor);
        if (!y) continue;
        targets_[x * coords_ + j] = *y;
        // p(y) / (p(x) + p(y))
        flip_[x * coords_ + j] =
            1.0 / (1.0 + std::exp(a(static_cast<Eigen::Index>(x)) -
                                  a(static_cast<Eigen::Index>(*y))));
      }
    }
  }

  std::size_t coords() const noexcept { return coords_; }
  std::size_t target(std::size_t x, std::size_t j) const noexcept {
    return targets_[x * coords_ + j];
  }
  double flip(std::size_t x, std::size_t j) const noexcept { return flip_[x * coords_ + j]; }

 private:
  std::size_t coords_;
  std::vector<std::size_t> targets_;
  std::vector<double> flip_;
};

struct KernelMatrix {
  Vector theta;
  Matrix probs;
};

/// K = (1/p) sum_j K_j, K_j resampling coordinate j from its exact conditional.
inline KernelMatrix build_gibbs_random_scan(const FiniteExpFamily& fam, const Vector& theta) {
  const GibbsConditionals cond(fam, theta);
  const auto n = static_cast<Eigen::Index>(fam.num_states());
  const double pick = 1.0 / static_cast<double>(cond.coords());
  Matrix K = Matrix::Zero(n, n);
  for (std::size_t x = 0; x < fam.num_states(); ++x) {
    const auto xi = static_cast<Eigen::Index>(x);
    for (std::size_t j = 0; j < cond.coords(); ++j) {
      const std::size_t y = cond.target(x, j);
      const double q = y == kNoState ? 0.0 : cond.flip(x, j);
      if (y != kNoState) K(xi, static_cast<Eigen::Index>(y)) += pick * q;
      K(xi, xi) += pick * (1.0 - q);
    }
  }
  return {theta, std::move(K)};
}

/// Exact m-step kernel K^m by repeated squaring.
inline KernelMatrix kernel_power(const KernelMatrix& K, int m) {
  if (m <= 0) throw std::invalid_argument("kernel power must be >= 1");
  Matrix result;
  Matrix base = K.probs;
  bool have = false;
  for (unsigned e = static_cast<unsigned>(m); e != 0; e >>= 1) {
    if (e & 1U) {
      result = have ? Matrix(result * base) : base;
      have = true;
    }
    if (e > 1) base = base * base;
  }
  return {K.theta, std::move(result)};
}

/// max_y |(pi^T K)(y) - pi(y)|.
inline double stationarity_error(const KernelMatrix& K, const Vector& pi) {
  return (K.probs.transpose() * pi - pi).cwiseAbs().maxCoeff();
}

/// max_{x,y} |pi(x) K(x,y) - pi(y) K(y,x)|.
inline double reversibility_error(const KernelMatrix& K, const Vector& pi) {
  const Matrix flow = pi.asDiagonal() * K.probs;
  return (flow - flow.transpose()).cwiseAbs().maxCoeff();
}

/// max_x |sum_y K(x,y) - 1|.
inline double row_sum_error(const KernelMatrix& K) {
  return (K.probs.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

/// alpha(theta): second-largest absolute eigenvalue of D^{1/2} K D^{-1/2},
/// D = diag(p_theta). The L2 spectral gap is 1 - alpha.
inline double spectral_gap(const FiniteExpFamily& fam, const KernelMatrix& K,
                           double reversibility_tol = 1e-10) {
  const Vector pi = probabilities(fam, K.theta);
  if (K.probs.rows() != pi.size() || K.probs.cols() != pi.size())
    throw DimensionError("kernel does not match the state space");
  if (reversibility_error(K, pi) > reversibility_tol)
    throw std::domain_error("kernel is not reversible with respect to p_theta");
  if (pi.size() == 1) return 0.0;
  const Vector root = pi.cwiseSqrt();
  Matrix S = root.asDiagonal() * K.probs * root.cwiseInverse().asDiagonal();
  S = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S, Eigen::EigenvaluesOnly);
  std::vector<double> mags(static_cast<std::size_t>(eig.eigenvalues().size()));
  for (std::size_t i = 0; i < mags.size(); ++i)
    mags[i] = std::abs(eig.eigenvalues()(static_cast<Eigen::Index>(i)));
  std::sort(mags.begin(), mags.end(), std::greater<>());
  return std::min(mags[1], 1.0);
}

/// rho(K1, K2) = max_x sum_y |K1(x,y) - K2(x,y)|; the sup over |f| <= 1 is
/// attained by the sign pattern of each row difference.
inline double kernel_distance(const KernelMatrix& K1, const KernelMatrix& K2) {
  if (K1.probs.rows() != K2.probs.rows() || K1.probs.cols() != K2.probs.cols())
    throw DimensionError("kernel shapes differ");
  return (K1.probs - K2.probs).cwiseAbs().rowwise().sum().maxCoeff();
}

struct ZetaEstimate {
  double zeta = 0.0;
  double spacing = 0.0;
  std::size_t pairs = 0;
  Vector worst_a;
  Vector worst_b;
};

/// Lower estimate of the kernel Lipschitz constant: max over neighbouring grid
/// pairs of rho(K_a, K_b) / ||a - b||. `build` maps theta to a KernelMatrix.
template <class KernelBuilder>
ZetaEstimate estimate_zeta(const ThetaGrid& grid, KernelBuilder&& build) {
  const std::vector<Vector> points = grid.points();
  std::vector<KernelMatrix> kernels;
  kernels.reserve(points.size());
  for (const auto& theta : points) kernels.push_back(build(theta));
  ZetaEstimate est;
  est.spacing = grid.spacing();
  for (const auto& [a, b] : grid.neighbor_pairs()) {
    const double gap = (points[a] - points[b]).norm();
    if (gap == 0.0) continue;
    ++est.pairs;
    const double ratio = kernel_distance(kernels[a], kernels[b]) / gap;
    if (ratio > est.zeta || est.worst_a.size() == 0) {
      est.zeta = ratio;
      est.worst_a = points[a];
      est.worst_b = points[b];
    }
  }
  return est;
}

inline ZetaEstimate estimate_zeta(const FiniteExpFamily& fam, const ThetaGrid& grid) {
  return estimate_zeta(grid, [&](const Vector& theta) {
    return build_gibbs_random_scan(fam, theta);
  });
}

inline std::string state_label(const State& s) {
  const bool digits = std::all_of(s.begin(), s.end(), [](int v) { return v >= 0 && v <= 9; });
  std::string out;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!digits && j > 0) out += ':';
    out += std::to_string(s[j]);
  }
  return out;
}

/// Dense CSV: header of state labels, then one row per source state.
inline void write_kernel_csv(std::ostream& os, const FiniteExpFamily& fam,
                             const KernelMatrix& K) {
  for (std::size_t x = 0; x < fam.num_states(); ++x)
    os << (x ? "," : "") << state_label(fam.states()[x]);
  os << '\n';
  char buf[32];
  for (Eigen::Index r = 0; r < K.probs.rows(); ++r) {
    for (Eigen::Index c = 0; c < K.probs.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", K.probs(r, c));
      os << (c ? "," : "") << buf;
    }
    os << '\n';
  }
}

}  // namespace cdanneal

#endif  // CDANNEAL_KERNEL_HPP
