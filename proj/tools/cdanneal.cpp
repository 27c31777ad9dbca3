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

// Command-line front end.
//
//   cdanneal run      --config cfg.json [--seed S] [--out DIR] [--workers K]
//   cdanneal verify   --config cfg.json [--out DIR]
//   cdanneal rate     --config cfg.json [--seed S] [--out DIR] [--workers K]
//   cdanneal diagnose --out RUN_DIR [--workers K]
//
// Exit codes: 0 success, 1 runtime failure, 2 config or output-dir error,
// 3 acceptance-check failure (rate, diagnose).

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cdanneal/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;
constexpr int kCheckFailed = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned workers = 1;
};

cdanneal::RunConfig resolve(const Flags& f) {
  cdanneal::RunConfig cfg =
      f.config.empty() ? cdanneal::RunConfig{} : cdanneal::load_config(f.config);
  if (f.seed) cfg.master_seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Flags& f, bool with_seed, bool with_workers) {
  cmd->add_option("--config", f.config, "JSON run configuration (defaults if omitted)");
  if (with_seed) cmd->add_option("--seed", f.seed, "master seed (overrides the config)");
  cmd->add_option("--out", f.out, "output directory (overrides the config)");
  if (with_workers)
    cmd->add_option("--workers", f.workers, "parallel cells (0 = all cores)")->default_val(1);
}

int run_cmd(const Flags& f) {
  const auto res = cdanneal::run_experiment(resolve(f), f.workers);
  std::printf("cells: %zu  diagnostic violations: %zu  output: %s\n", res.cells.size(),
              res.total_violations(), res.config.out_dir.c_str());
  return kOk;
}

int verify_cmd(const Flags& f) {
  const auto rep = cdanneal::verify_assumptions(resolve(f));
  std::printf("A6: %s (%s)\n", rep.a6.pass() ? "pass" : "FAIL", rep.a6.detail.c_str());
  std::printf("lambda=%.6g  L=%.6g  alpha=%.6g  zeta=%.6g\n", rep.landscape.lambda,
              rep.landscape.L, rep.landscape.alpha, rep.landscape.zeta);
  std::printf("smallest m with a_m > 0: %d   with mixing <= lambda/2: %d\n",
              rep.smallest_m_positive, rep.smallest_m_half);
  return kOk;
}

int rate_cmd(const Flags& f) {
  const auto rep = cdanneal::rate_sweep(resolve(f), f.workers);
  for (const auto& v : rep.per_m)
    std::printf("m=%d slope=%.4f monotone=%s converging=%s\n", v.m, v.fit.slope,
                v.monotone ? "yes" : "no", v.fit.converging ? "yes" : "no");
  std::printf("rate check: %s\n", rep.pass() ? "PASS" : "FAIL");
  return rep.pass() ? kOk : kCheckFailed;
}

int diagnose_cmd(const Flags& f) {
  if (f.out.empty()) throw cdanneal::ConfigError("diagnose needs --out pointing at a run directory");
  const auto rep = cdanneal::diagnose(f.out, f.workers);
  std::printf("cells: %zu  diagnosed: %zu  violations: %zu\n", rep.cells, rep.diagnosed,
              rep.violations);
  std::printf("diagnose check: %s\n", rep.pass() ? "PASS" : "FAIL");
  return rep.pass() ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive divergence with annealed learning rates, checked exactly"};
  app.require_subcommand(1);
  Flags run_f, verify_f, rate_f, diag_f;
  auto* run = app.add_subcommand("run", "run the (n, m, seed) experiment grid");
  add_common(run, run_f, true, true);
  auto* verify = app.add_subcommand("verify", "estimate landscape constants and check assumptions");
  add_common(verify, verify_f, true, false);
  auto* rate = app.add_subcommand("rate", "run the grid and fit the convergence rate");
  add_common(rate, rate_f, true, true);
  auto* diag = app.add_subcommand("diagnose", "re-run diagnostics on a stored run directory");
  diag->add_option("--out", diag_f.out, "run directory written by `run` or `rate`")->required();
  diag->add_option("--workers", diag_f.workers, "parallel cells (0 = all cores)")->default_val(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return run_cmd(run_f);
    if (*verify) return verify_cmd(verify_f);
    if (*rate) return rate_cmd(rate_f);
    if (*diag) return diagnose_cmd(diag_f);
  } catch (const cdanneal::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const cdanneal::OutputDirError& e) {
    std::cerr << "output error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kRuntimeError;
}
