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

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "cdanneal/oracle.hpp"
#include "test_util.hpp"

namespace cdanneal {
namespace {

using testing::theta3;

const Vector kThetaStar = theta3(0.5, 1.0, 0.5);

// Landscape for the default box is reused by several tests.
const LandscapeConstants& DefaultLandscape() {
  static const LandscapeConstants c = [] {
    const auto fam = build_fvbm(2);
    const ParamBox box(3.0, 3);
    return estimate_landscape(fam, box, kThetaStar, ThetaGrid(box, 9));
  }();
  return c;
}

TEST(SampleIid, UniformFrequencies) {
  const auto fam = build_fvbm(2);
  const auto counts = sample_iid(fam, Vector::Zero(3), 1000000, 42).counts(4);
  for (auto c : counts) EXPECT_NEAR(static_cast<double>(c) / 1e6, 0.25, 0.002);
}

TEST(SampleIid, FrequenciesMatchExactProbabilities) {
  const auto fam = build_fvbm(2);
  const std::size_t n = 1000000;
  const auto counts = sample_iid(fam, kThetaStar, n, 7).counts(4);
  const Vector p = probabilities(fam, kThetaStar);
  for (int x = 0; x < 4; ++x) {
    const double band = 4.0 * std::sqrt(p(x) * (1.0 - p(x)) / static_cast<double>(n));
    EXPECT_NEAR(static_cast<double>(counts[static_cast<std::size_t>(x)]) / static_cast<double>(n), p(x), band);
  }
}

TEST(SampleIid, DeterministicPerSeed) {
  const auto fam = build_fvbm(3);
  const Vector theta = Vector::Constant(6, 0.3);
  EXPECT_EQ(sample_iid(fam, theta, 500, 9).items, sample_iid(fam, theta, 500, 9).items);
  EXPECT_NE(sample_iid(fam, theta, 500, 9).items, sample_iid(fam, theta, 500, 10).items);
}

TEST(Mle, UniformDataGivesOrigin) {
  const auto fam = build_fvbm(2);
  const std::vector<std::size_t> data{0, 1, 2, 3};
  const MleResult r = mle(fam, data, ParamBox(3.0, 3));
  EXPECT_LT(r.theta.norm(), 1e-10);
  EXPECT_TRUE(r.inside_box);
}

TEST(Mle, RecoversTruthFromLargeSample) {
  const auto fam = build_fvbm(2);
  const ParamBox box(3.0, 3);
  int close = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const DataSample s = sample_iid(fam, kThetaStar, 10000, seed);
    const MleResult r = mle(fam, s.items, box);
    EXPECT_LT(r.residual, 1e-10);
    EXPECT_LT((mean_parameter(fam, r.theta) - empirical_mean_phi(fam, s.items)).norm(), 1e-10);
    close += (r.theta - kThetaStar).norm() < 0.2;
  }
  EXPECT_GE(close, 18);
}

TEST(Mle, BoundaryMomentsHaveNoMaximizer) {
  const auto fam = build_fvbm(2);
  const std::vector<std::size_t> all11(10, 3);
  EXPECT_THROW(mle(fam, all11, ParamBox(3.0, 3)), MleNotFound);
  const std::vector<std::size_t> no11{0, 1, 2, 0};
  EXPECT_THROW(mle(fam, no11, ParamBox(3.0, 3)), MleNotFound);
}

TEST(Mle, ReportsEstimatesOutsideTheBox) {
  const auto fam = build_fvbm(2);
  // p(1,1) tiny relative to the others: theta_2 strongly negative.
  std::vector<std::size_t> data;
  for (int i = 0; i < 1000; ++i) data.push_back(static_cast<std::size_t>(i % 3));
  data.push_back(3);
  const MleResult r = mle(fam, data, ParamBox(3.0, 3));
  EXPECT_FALSE(r.inside_box);
  EXPECT_LE(r.clipped.cwiseAbs().maxCoeff(), 3.0);
}

TEST(ConstraintMle, MarginsAndAdversarialData) {
  const auto exact = check_constraint_mle(kThetaStar, kThetaStar, 10000, 0.45);
  EXPECT_TRUE(exact.pass);
  EXPECT_DOUBLE_EQ(exact.margin, std::pow(10000.0, 0.45));

  const auto fam = build_fvbm(2);
  const ParamBox box(3.0, 3);
  const Vector far = kThetaStar + theta3(0.0, 3.0, 0.0);
  const DataSample bad = sample_iid(fam, far, 10000, 1);
  EXPECT_FALSE(check_constraint_mle(fam, bad, box, kThetaStar, 0.45).pass);
}

TEST(ConstraintMle, PassRateAtLargeN) {
  const auto fam = build_fvbm(2);
  const ParamBox box(3.0, 3);
  int pass = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed)
    pass += check_constraint_mle(fam, sample_iid(fam, kThetaStar, 10000, seed), box, kThetaStar, 0.45).pass;
  EXPECT_GE(pass, 95);
}

TEST(EmpiricalProcess, ExactFrequenciesGiveZeroDeviation) {
  const auto fam = build_fvbm(2);
  const ThetaGrid grid(ParamBox(3.0, 3), 5);
  const auto points = grid.points();
  const EmpiricalProcessTable table(fam, Vector::Zero(3), 2, points);
  const std::vector<std::size_t> counts{25, 25, 25, 25};
  for (std::size_t k = 0; k < table.size(); ++k)
    EXPECT_LT(table.deviation(k, counts, 100).norm(), 1e-14);
}

TEST(EmpiricalProcess, DeviationMatchesTwoLoopSummation) {
  const auto fam = build_fvbm(2);
  const ThetaGrid grid(ParamBox(3.0, 3), 3);
  const auto points = grid.points();
  const int m = 2;
  const EmpiricalProcessTable table(fam, kThetaStar, m, points);
  const DataSample s = sample_iid(fam, kThetaStar, 37, 5);
  const auto counts = s.counts(4);
  const Vector pstar = probabilities(fam, kThetaStar);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const Matrix Km = testing::enumerate_m_step(fam, points[k], m);
    Vector lhs = Vector::Zero(3), rhs = Vector::Zero(3);
    for (std::size_t i = 0; i < s.items.size(); ++i)
      for (int y = 0; y < 4; ++y)
        lhs += Km(static_cast<Eigen::Index>(s.items[i]), y) * fam.phi(static_cast<std::size_t>(y)).transpose();
    lhs /= static_cast<double>(s.items.size());
    for (int x = 0; x < 4; ++x)
      for (int y = 0; y < 4; ++y)
        rhs += pstar(x) * Km(x, y) * fam.phi(static_cast<std::size_t>(y)).transpose();
    EXPECT_LT((table.deviation(k, counts, s.items.size()) - (lhs - rhs)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(EmpiricalProcess, PassRateAtLargeN) {
  const auto fam = build_fvbm(2);
  const ThetaGrid grid(ParamBox(3.0, 3), 9);
  const auto points = grid.points();
  const EmpiricalProcessTable table(fam, kThetaStar, 2, points);
  int pass = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed)
    pass += table.check(sample_iid(fam, kThetaStar, 10000, seed).counts(4), 10000, 0.45).pass;
  EXPECT_GE(pass, 95);
}

TEST(ChiDistance, ZeroAtTruthAndMatchesSum) {
  const auto fam = build_fvbm(2);
  EXPECT_EQ(chi_distance(fam, kThetaStar, kThetaStar), 0.0);
  StreamRng rng(3);
  const Vector pstar = probabilities(fam, kThetaStar);
  for (int i = 0; i < 20; ++i) {
    const Vector theta = testing::random_theta(rng, 3, 3.0);
    const Vector p = probabilities(fam, theta);
    const double direct = std::sqrt((pstar.array().square() / p.array()).sum() - 1.0);
    EXPECT_NEAR(chi_distance(fam, kThetaStar, theta), direct, 1e-10 * (1.0 + direct));
  }
}

TEST(Landscape, DefaultBoxValues) {
  const auto& c = DefaultLandscape();
  EXPECT_EQ(c.C, 1.0);
  EXPECT_EQ(c.d, 3u);
  EXPECT_GT(c.lambda, 0.0);
  EXPECT_LT(c.alpha, 1.0);
  // the theta = 0 cell alone already gives alpha = 1/2
  EXPECT_GE(c.alpha, 0.5);
  EXPECT_GT(c.L, 0.0);
  EXPECT_GT(c.zeta, 0.0);
  // Reference values from an independent enumeration script. The axis-only
  // quotient on this grid is 24.88; the one-cell neighbourhood gives 30.30.
  EXPECT_NEAR(c.lambda, 3.9e-5, 0.1e-5);
  EXPECT_NEAR(c.alpha, 0.8176, 0.001);
  EXPECT_NEAR(c.L, 30.2957, 1e-3);
}

// chi distance from raw weights, with no library calls beyond phi.
double RawChi(const FiniteExpFamily& fam, const Vector& star, const Vector& theta) {
  double zs = 0, zt = 0;
  std::vector<double> ws, wt;
  for (std::size_t x = 0; x < fam.num_states(); ++x) {
    ws.push_back(testing::weight(fam, x, star));
    wt.push_back(testing::weight(fam, x, theta));
    zs += ws.back();
    zt += wt.back();
  }
  double s = 0;
  for (std::size_t x = 0; x < ws.size(); ++x) s += (ws[x] / zs) * (ws[x] / zs) / (wt[x] / zt);
  return std::sqrt(std::max(0.0, s - 1.0));
}

// Max |f(u) - f(v)| / |u - v| over every pair of grid points one cell apart.
double BruteLipschitz(const FiniteExpFamily& fam, double M, int k) {
  const double h = 2.0 * M / (k - 1);
  std::vector<double> f(static_cast<std::size_t>(k * k * k));
  auto at = [&](int i, int j, int l) { return static_cast<std::size_t>((i * k + j) * k + l); };
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < k; ++l)
        f[at(i, j, l)] = RawChi(fam, kThetaStar, theta3(-M + i * h, -M + j * h, -M + l * h));
  double best = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < k; ++l)
        for (int a = -1; a <= 1; ++a)
          for (int b = -1; b <= 1; ++b)
            for (int c = -1; c <= 1; ++c) {
              const int i2 = i + a, j2 = j + b, l2 = l + c;
              if ((a | b | c) == 0 || i2 < 0 || j2 < 0 || l2 < 0 || i2 >= k || j2 >= k || l2 >= k)
                continue;
              const double dist = h * std::sqrt(double(a * a + b * b + c * c));
              best = std::max(best, std::abs(f[at(i, j, l)] - f[at(i2, j2, l2)]) / dist);
            }
  return best;
}

TEST(Landscape, LipschitzMatchesBruteForceNeighbourQuotient) {
  const auto fam = build_fvbm(2);
  EXPECT_NEAR(DefaultLandscape().L, BruteLipschitz(fam, 3.0, 9), 1e-9);
}

// The grid quotient is a lower bound on the true constant: it grows under
// refinement and never exceeds a sampled gradient norm.
TEST(Landscape, LipschitzEstimateIsARefiningLowerBound) {
  const auto fam = build_fvbm(2);
  const ParamBox box(3.0, 3);
  const auto coarse = estimate_landscape(fam, box, kThetaStar, ThetaGrid(box, 9), ThetaGrid(box, 3));
  const auto fine = estimate_landscape(fam, box, kThetaStar, ThetaGrid(box, 17), ThetaGrid(box, 3));
  EXPECT_GE(fine.L, coarse.L);
  EXPECT_LE(fine.lambda, coarse.lambda * (1.0 + 1e-12));
  StreamRng rng(11);
  double grad_max = 0;
  const auto f = [&](const Vector& t) { return RawChi(fam, kThetaStar, t); };
  for (int i = 0; i < 4000; ++i) {
    const Vector t = testing::random_theta(rng, 3, 2.999);
    grad_max = std::max(grad_max, testing::fd_gradient(f, t, 1e-6).norm());
  }
  for (double s : {-2.999, 2.999})
    for (double u : {-2.999, 2.999})
      for (double v : {-2.999, 2.999})
        grad_max = std::max(grad_max, testing::fd_gradient(f, theta3(s, u, v), 1e-6).norm());
  EXPECT_LE(fine.L, grad_max * (1.0 + 1e-3));
}

TEST(Landscape, RejectsTruthOnBoundary) {
  const auto fam = build_fvbm(2);
  const ParamBox box(1.0, 3);
  EXPECT_THROW(estimate_landscape(fam, box, theta3(1.0, 0, 0), ThetaGrid(box, 3)),
               OutsideRegionError);
}

TEST(TheoryConstants, SmallestPositiveM) {
  const auto& c = DefaultLandscape();
  const int m_pos = smallest_m_for(c, 1.0);
  const int m_half = smallest_m_for(c, 0.5);
  EXPECT_NEAR(m_pos, 70, 1);
  EXPECT_GT(m_half, m_pos);
  const auto below = assemble_constants(c, m_pos - 1, 10000, 0.45);
  const auto at = assemble_constants(c, m_pos, 10000, 0.45);
  EXPECT_FALSE(below.hypotheses_met);
  EXPECT_TRUE(at.hypotheses_met);
  EXPECT_TRUE(std::isfinite(at.K_m));
  EXPECT_GT(at.a_m, 0.0);
  const auto half = assemble_constants(c, m_half, 10000, 0.45);
  EXPECT_LE(half.mixing, 0.5 * c.lambda);
  EXPECT_GE(half.a_m, 0.5 * c.lambda);
}

TEST(TheoryConstants, SmallerBoxNeedsFewerSteps) {
  const auto fam = build_fvbm(2);
  const ParamBox small(1.5, 3), mid(2.0, 3);
  const auto a = estimate_landscape(fam, small, kThetaStar, ThetaGrid(small, 9));
  const auto b = estimate_landscape(fam, mid, kThetaStar, ThetaGrid(mid, 9));
  EXPECT_NEAR(smallest_m_for(a, 1.0), 20, 1);
  EXPECT_NEAR(smallest_m_for(b, 1.0), 31, 1);
}

TEST(TheoryConstants, FormulasAndUnmetFlag) {
  const auto& c = DefaultLandscape();
  const auto k = assemble_constants(c, 2, 10000, 0.45);
  const double mix = std::sqrt(3.0) * c.L * c.alpha * c.alpha;
  EXPECT_NEAR(k.mixing, mix, 1e-12 * mix);
  EXPECT_NEAR(k.a_m, c.lambda - mix, 1e-12 * mix);
  EXPECT_NEAR(k.b_nm, (1.0 + mix) * std::pow(10000.0, -0.05), 1e-12 * mix);
  EXPECT_NEAR(k.beta, std::pow(10000.0, 0.1 / 6.0), 1e-15);
  EXPECT_FALSE(k.hypotheses_met);
  EXPECT_TRUE(std::isinf(k.ball_radius));
  const nlohmann::json j = to_json(k);
  EXPECT_TRUE(j.at("K_m").is_null());
  EXPECT_EQ(j.at("status"), "Theorem hypotheses unmet");
  EXPECT_TRUE(j.contains("grid"));
  EXPECT_EQ(j.at("grid").at("points_per_axis"), 9);

  const auto forced = assemble_constants(c, 100, 10000, 0.45, 1.0);
  EXPECT_EQ(forced.occupancy_threshold(), 0.0);
  EXPECT_THROW(assemble_constants(c, 0, 10, 0.45), std::invalid_argument);
  EXPECT_THROW(assemble_constants(c, 2, 10, 0.5), std::invalid_argument);
}

}  // namespace
}  // namespace cdanneal
