// Copyright 2026 The gradmask Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// gradmask command-line driver.
//
//   gradmask run      one training run from a config file
//   gradmask grid     policy x seed sweep
//   gradmask compare  paired t-test of each policy in a sweep against a baseline
//   gradmask export   rebuild timeline CSVs for a run directory
//   gradmask check    invariant and gradient self-tests
//
// Exit codes: 0 success, 2 configuration or input error, 3 numerical abort
// or failed self-check, 4 I/O error.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gradmask/grid.hpp"
#include "gradmask/harness.hpp"
#include "gradmask/selfcheck.hpp"

namespace {

using namespace gradmask;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

struct Overrides {
  std::string config;
  std::string out;
  std::string policy;
  std::string task;
  std::vector<double> p;
  std::vector<std::size_t> epochs;
  std::vector<std::uint64_t> seed;
  bool pretrain = false;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "RunConfig JSON file (defaults apply to absent fields)");
  cmd->add_option("-o,--out", o.out, "Output directory");
  cmd->add_option("--policy", o.policy, "Mask policy name");
  cmd->add_option("--task", o.task, "Task: majority-token, first-last-match, windowed-parity");
  cmd->add_option("--p", o.p, "Dropout probability")->expected(1);
  cmd->add_option("--epochs", o.epochs, "Training epochs T")->expected(1);
  cmd->add_option("--seed", o.seed, "Set the data, init and mask seeds to one value")->expected(1);
  cmd->add_flag("--pretrain", o.pretrain, "Enable masked-token pretraining");
}

RunConfig build_config(const Overrides& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.policy.empty()) {
    const auto k = parse_policy(o.policy);
    if (!k) throw ConfigError("unknown policy '" + o.policy + "'");
    cfg.policy.kind = *k;
  }
  if (!o.task.empty()) {
    const auto t = parse_task(o.task);
    if (!t) throw ConfigError("unknown task '" + o.task + "'");
    cfg.train.task = *t;
  }
  if (!o.p.empty()) cfg.policy.p = o.p.front();
  if (!o.epochs.empty()) cfg.train.epochs = o.epochs.front();
  if (!o.seed.empty()) cfg.seeds = {o.seed.front(), o.seed.front(), o.seed.front()};
  if (o.pretrain) cfg.pretrain.enabled = true;
  cfg.validate();
  return cfg;
}

std::vector<PolicyKind> parse_policy_list(const std::vector<std::string>& names) {
  std::vector<PolicyKind> out;
  for (const auto& n : names) {
    if (n == "all") {
      out.assign(std::begin(kAllPolicies), std::end(kAllPolicies));
      continue;
    }
    const auto k = parse_policy(n);
    if (!k) throw ConfigError("unknown policy '" + n + "'");
    out.push_back(*k);
  }
  return out;
}

void print_summary(const RunRecord& rec) {
  std::printf("%-22s best %.4f (epoch %zu)  final %.4f  status %s\n", rec.policy.c_str(), rec.best_accuracy,
              rec.best_epoch, rec.final_accuracy, rec.status.c_str());
}

void print_compare(const std::vector<CompareRow>& rows) {
  std::printf("%-22s %5s %9s %9s %9s %9s %9s %s\n", "policy", "pairs", "mean", "baseline", "diff", "t", "p",
              "stability(policy/base)");
  for (const auto& r : rows) {
    std::printf("%-22s %5zu %9.4f %9.4f %+9.4f %9.3f %9.4f %.4f/%.4f%s\n", r.policy.c_str(), r.pairs,
                r.mean_treatment, r.mean_baseline, r.test.mean_diff, r.test.t, r.test.p_value,
                r.stability_treatment, r.stability_baseline, r.test.degenerate ? "  [degenerate]" : "");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-masking fine-tuning experiments on a small transformer"};
  app.require_subcommand(1);

  Overrides run_opts;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Train one configuration");
  add_overrides(run, run_opts);
  run->add_flag("-q,--quiet", quiet, "No per-epoch progress on stderr");

  Overrides grid_opts;
  std::vector<std::string> grid_policies{"sft", "graddrop"};
  std::vector<std::uint64_t> grid_seeds{0, 1, 2, 3, 4};
  std::size_t jobs = 1;
  bool grid_quiet = false;
  auto* grid = app.add_subcommand("grid", "Sweep policies x seeds");
  add_overrides(grid, grid_opts);
  grid->add_option("--policies", grid_policies, "Policies to run ('all' for every kind)")->delimiter(',');
  grid->add_option("--seeds", grid_seeds, "Seed offsets k; cell seeds are base + k")->delimiter(',');
  grid->add_option("-j,--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  grid->add_flag("-q,--quiet", grid_quiet, "No per-epoch progress on stderr");

  std::string compare_dir, baseline = "sft", metric = "final";
  auto* compare = app.add_subcommand("compare", "Paired t-test of every policy against a baseline");
  compare->add_option("dir", compare_dir, "Grid directory")->required();
  compare->add_option("--baseline", baseline, "Baseline policy");
  compare->add_option("--metric", metric, "final or best accuracy")->check(CLI::IsMember({"final", "best"}));

  std::string export_dir, export_out;
  auto* exporter = app.add_subcommand("export", "Write timeline CSVs for a run directory");
  exporter->add_option("dir", export_dir, "Run directory")->required();
  exporter->add_option("-o,--out", export_out, "Destination (defaults to the run directory)");

  auto* check = app.add_subcommand("check", "Run the invariant and gradient self-tests");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (run->parsed()) {
      const RunConfig cfg = build_config(run_opts);
      RunOptions opts;
      opts.verbose = !quiet;
      print_summary(run_experiment(cfg, opts));
      std::printf("outputs in %s\n", cfg.output_dir.c_str());
    } else if (grid->parsed()) {
      GridSpec spec;
      spec.base = build_config(grid_opts);
      spec.out_dir = grid_opts.out.empty() ? std::filesystem::path("runs/grid") : std::filesystem::path(grid_opts.out);
      spec.policies = parse_policy_list(grid_policies);
      spec.seeds = grid_seeds;
      spec.jobs = jobs;
      spec.verbose = !grid_quiet;
      bool aborted = false;
      for (const auto& cell : run_grid(spec)) {
        std::printf("seed %-3llu ", static_cast<unsigned long long>(cell.seed));
        if (cell.status == "nan_abort") {
          std::printf("%-22s aborted on non-finite loss\n", std::string(policy_name(cell.policy)).c_str());
          aborted = true;
        } else {
          print_summary(cell.record);
        }
      }
      if (aborted) return kExitNumerical;
    } else if (compare->parsed()) {
      const auto rows = compare_grid(compare_dir, baseline, metric == "best" ? CompareMetric::kBest : CompareMetric::kFinal);
      print_compare(rows);
    } else if (exporter->parsed()) {
      const RunRecord rec = load_run_record(export_dir);
      const std::filesystem::path dest(export_out.empty() ? export_dir : export_out);
      std::filesystem::create_directories(dest);
      export_timeline(rec, dest);
      std::printf("wrote %s and %s\n", (dest / "timeline_layers.csv").string().c_str(),
                  (dest / "timeline_metrics.csv").string().c_str());
    } else if (check->parsed()) {
      bool ok = true;
      for (const auto& r : run_self_checks()) {
        std::printf("[%s] %-22s %6.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
        ok = ok && r.passed;
      }
      return ok ? 0 : kExitNumerical;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return kExitNumerical;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  }
  return 0;
}
