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

#include <chrono>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

#include <gtest/gtest.h>

#include "cdanneal/harness.hpp"

namespace cdanneal {
namespace {

fs::path ScratchDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cdanneal_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::map<std::string, std::string> Snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), {});
  }
  return files;
}

Vector ThetaStar() {
  Vector v(3);
  v << 0.5, 1.0, 0.5;
  return v;
}

RunConfig SmallConfig(const fs::path& out) {
  RunConfig c;
  c.n_list = {100};
  c.m_list = {2};
  c.seeds = {1};
  c.out_dir = out.string();
  return c;
}

TEST(RunConfig, DefaultsMirrorReferenceExperiment) {
  const RunConfig c;
  EXPECT_EQ(c.model.at("type"), "fvbm");
  EXPECT_EQ(c.model.at("p"), 2);
  EXPECT_EQ(c.theta_star, (std::vector<double>{0.5, 1.0, 0.5}));
  EXPECT_EQ(c.n_list, (std::vector<std::size_t>{100, 1000, 10000}));
  EXPECT_EQ(c.m_list, (std::vector<int>{2, 4}));
  EXPECT_EQ(c.iterations, 1000u);
  EXPECT_EQ(c.burn_in, 50u);
  EXPECT_EQ(c.schedule.kind, ScheduleKind::harmonic);
  EXPECT_EQ(c.seeds.size(), 20u);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, JsonRoundTripIsIdentity) {
  RunConfig c;
  c.n_list = {10, 20, 30};
  c.seeds = {4, 8, 15};
  c.theta0 = {0.1, -0.2, 0.3};
  c.sampler = EndpointSampler::rows;
  c.schedule = {ScheduleKind::power, 2.5, 0.7};
  const nlohmann::json j = c;
  const RunConfig back = parse_config(j);
  EXPECT_EQ(back, c);
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
}

TEST(RunConfig, SeedCountShorthand) {
  const RunConfig c = parse_config(nlohmann::json::parse(R"({"seeds": 3})"));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST(RunConfig, InvalidConfigsAreRejected) {
  const char* bad[] = {
      R"({"theta_star": [0.5, 1.0]})",
      R"({"theta_star": [3.0, 0.0, 0.0]})",
      R"({"iterations": 50, "burn_in": 50})",
      R"({"n_list": [0]})",
      R"({"gamma": 0.5})",
      R"({"m_list": [0]})",
      R"({"seeds": []})",
      R"({"schedule": {"kind": "power", "eta0": 1, "exponent": 0.3}})",
      R"({"schedule": {"kind": "cosine"}})",
      R"({"model": {"type": "fvbm", "p": 0}})",
      R"({"tail_fraction": 0})",
      R"([1, 2])",
  };
  for (const char* text : bad)
    EXPECT_THROW(parse_config(nlohmann::json::parse(text)), ConfigError) << text;
}

TEST(Harness, UnwritableOutputFailsBeforeCompute) {
  const fs::path file = ScratchDir("blocker");
  { std::ofstream(file) << "x"; }
  RunConfig c = SmallConfig(file / "sub");
  EXPECT_THROW(run_experiment(c), OutputDirError);
  fs::remove(file);
}

TEST(Harness, SmokeRunIsFastAndWritesSchema) {
  const fs::path out = ScratchDir("smoke");
  const auto start = std::chrono::steady_clock::now();
  const ExperimentResult res = run_experiment(SmallConfig(out));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 5.0);
  ASSERT_EQ(res.cells.size(), 1u);
  EXPECT_GT(res.cells[0].delta.tail_max, 0.0);

  for (const char* name : {"config.json", "constants.json", "summary.csv", "constraints.csv",
                           "delta_summary.csv", "curves.csv", "curves.svg"})
    EXPECT_TRUE(fs::exists(out / name)) << name;
  const fs::path cell = out / "cells" / cell_name(100, 2, 1);
  const CsvTable traj = read_csv(cell / "trajectory.csv");
  EXPECT_EQ(traj.header.front(), "t");
  EXPECT_EQ(traj.header.size(), 2u + 3u + 1u + 3u + 2u);
  EXPECT_EQ(traj.rows.size(), 1001u);
  EXPECT_NO_THROW(traj.column("dist_to_mle"));
  EXPECT_NO_THROW(traj.column("thetabar_3"));
  const auto side = read_json(cell / "trajectory.json");
  for (const char* key : {"seed", "schedule", "m", "n", "t0", "M"}) EXPECT_TRUE(side.contains(key));
  const CsvTable cons = read_csv(out / "constraints.csv");
  EXPECT_EQ(cons.header[0], "seed");
  EXPECT_NO_THROW(cons.column("mle_margin"));
  const auto constants = read_json(out / "constants.json");
  ASSERT_TRUE(constants.is_array());
  EXPECT_TRUE(constants[0].contains("grid"));
  const auto verdicts = read_json(cell / "verdicts.json");
  EXPECT_TRUE(verdicts.contains("status"));
}

TEST(Harness, RerunIsByteIdenticalAcrossWorkerCounts) {
  const fs::path a = ScratchDir("det_a"), b = ScratchDir("det_b");
  RunConfig c = SmallConfig(a);
  c.n_list = {100, 300};
  c.m_list = {1, 2};
  c.seeds = {1, 2};
  c.iterations = 200;
  run_experiment(c, 1);
  c.out_dir = b.string();
  run_experiment(c, 3);
  auto sa = Snapshot(a), sb = Snapshot(b);
  sa.erase("config.json");
  sb.erase("config.json");
  EXPECT_EQ(sa, sb);
  EXPECT_GT(sa.size(), 10u);
}

TEST(Harness, DiagnoseReproducesStoredRun) {
  const fs::path out = ScratchDir("diag");
  RunConfig c = SmallConfig(out);
  const int m = smallest_m_for(
      estimate_landscape(build_fvbm(2), ParamBox(3.0, 3), ThetaStar(), ThetaGrid(ParamBox(3.0, 3), 9)),
      0.5);
  c.n_list = {2000};
  c.m_list = {m};
  c.iterations = 150;
  c.sampler = EndpointSampler::rows;
  const ExperimentResult res = run_experiment(c);
  ASSERT_EQ(res.cells.size(), 1u);
  const CellResult& cell = res.cells[0];
  ASSERT_EQ(cell.status, "ok");
  EXPECT_TRUE(cell.diagnosed);
  EXPECT_EQ(cell.violations(), 0u);

  const DiagnoseReport rep = diagnose(out);
  EXPECT_EQ(rep.cells, 1u);
  EXPECT_EQ(rep.diagnosed, 1u);
  EXPECT_TRUE(rep.pass());
  const CellResult& again = rep.results[0];
  EXPECT_EQ(again.delta.tail_max, cell.delta.tail_max);
  EXPECT_EQ(again.drift.worst_slack, cell.drift.worst_slack);
  EXPECT_EQ(again.martingale_z.steps, cell.martingale_z.steps);
  EXPECT_TRUE(fs::exists(out / "diagnose" / "diagnose.json"));
}

TEST(Harness, VerifyReportsAssumptions) {
  const fs::path out = ScratchDir("verify");
  RunConfig c = SmallConfig(out);
  const AssumptionReport rep = verify_assumptions(c);
  EXPECT_TRUE(rep.a6.pass());
  EXPECT_GT(rep.smallest_m_positive, 0);
  EXPECT_FALSE(rep.identifiability.degenerate);
  const auto j = read_json(out / "assumptions.json");
  EXPECT_TRUE(j.at("a6").at("pass").get<bool>());
  EXPECT_EQ(j.at("constants_at_smallest_m").size(), 2u);
  EXPECT_TRUE(j.at("constants_at_smallest_m")[0].at("hypotheses_met").get<bool>());

  c.schedule = {ScheduleKind::fixed, 0.1, 1.0};
  const AssumptionReport fixed = verify_assumptions(c);
  EXPECT_FALSE(fixed.a6.pass());
}

TEST(Harness, RateSweepNeedsEnoughCells) {
  RunConfig c = SmallConfig(ScratchDir("rate_thin"));
  c.n_list = {100, 1000};
  EXPECT_THROW(rate_sweep(c), ConfigError);
  c.n_list = {100, 200, 400};
  c.seeds = {1, 2, 3};
  EXPECT_THROW(rate_sweep(c), ConfigError);
}

TEST(Harness, ParallelForPropagatesErrors) {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] = 1; });
  EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 100);
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 7) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST(Harness, QuantileAndFormatting) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({5}, 0.25), 5.0);
  EXPECT_EQ(fmt(0.1), "0.10000000000000001");
  EXPECT_EQ(fmt(std::nan("")), "nan");
  EXPECT_EQ(std::strtod(fmt(1.0 / 3.0).c_str(), nullptr), 1.0 / 3.0);
}

}  // namespace
}  // namespace cdanneal
