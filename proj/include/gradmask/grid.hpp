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

#pragma once

// Policy x seed sweeps and the paired comparison against a baseline policy.
//
// Layout of a grid directory:
//   <out>/pretrain/seed_<k>.ckpt    shared pretrained weights (pretraining on)
//   <out>/<policy>/seed_<k>/        one run directory per cell
//   <out>/grid.json                 cell manifest
//   <out>/compare.json, .csv        written by compare_grid

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "gradmask/harness.hpp"
#include "gradmask/stats.hpp"

namespace gradmask {

struct GridSpec {
  RunConfig base;
  std::vector<PolicyKind> policies{PolicyKind::kSft, PolicyKind::kGradDrop};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t jobs = 1;
  std::filesystem::path out_dir = "runs/grid";
  bool verbose = false;
};

struct GridCell {
  PolicyKind policy = PolicyKind::kSft;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  RunConfig config;
  RunRecord record;
  std::string status = "pending";
};

/// Seed index k offsets every base seed by k, so cells sharing k share data
/// and initialization and differ only in policy (and mask stream).
inline Seeds cell_seeds(const Seeds& base, std::uint64_t k) {
  return {base.data + k, base.init + k, base.mask + k};
}

inline std::filesystem::path cell_dir(const std::filesystem::path& out, PolicyKind policy, std::uint64_t k) {
  return out / std::string(policy_name(policy)) / ("seed_" + std::to_string(k));
}

inline RunConfig cell_config(const GridSpec& spec, PolicyKind policy, std::uint64_t k) {
  RunConfig cfg = spec.base;
  cfg.policy.kind = policy;
  cfg.seeds = cell_seeds(spec.base.seeds, k);
  cfg.output_dir = cell_dir(spec.out_dir, policy, k).string();
  if (cfg.pretrain.enabled) {
    cfg.pretrain.checkpoint = (spec.out_dir / "pretrain" / ("seed_" + std::to_string(k) + ".ckpt")).string();
  }
  return cfg;
}

/// Run every (policy, seed) cell. Pretrained checkpoints are produced up
/// front, one per seed, so concurrent cells only ever read them. A cell that
/// aborts on a non-finite loss is recorded as such and the sweep continues;
/// any other failure is rethrown once all workers have stopped.
inline std::vector<GridCell> run_grid(const GridSpec& spec) {
  if (spec.policies.empty() || spec.seeds.empty()) throw ConfigError("grid needs at least one policy and one seed");
  if (spec.jobs < 1) throw ConfigError("grid jobs must be at least 1");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(spec.out_dir, ec);
  if (ec) throw IoError(spec.out_dir.string() + ": cannot create grid directory: " + ec.message());

  std::vector<GridCell> cells;
  for (PolicyKind p : spec.policies) {
    for (std::uint64_t k : spec.seeds) {
      GridCell c;
      c.policy = p;
      c.seed = k;
      c.config = cell_config(spec, p, k);
      c.config.validate();
      c.dir = c.config.output_dir;
      cells.push_back(std::move(c));
    }
  }

  if (spec.base.pretrain.enabled) {
    fs::create_directories(spec.out_dir / "pretrain", ec);
    if (ec) throw IoError((spec.out_dir / "pretrain").string() + ": " + ec.message());
    for (std::uint64_t k : spec.seeds) prepare_model(cell_config(spec, spec.policies.front(), k), {});
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(cells.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      GridCell& c = cells[i];
      try {
        RunOptions opts;
        opts.verbose = spec.verbose;
        c.record = run_experiment(c.config, opts);
        c.status = c.record.status;
      } catch (const NumericalError&) {
        c.status = "nan_abort";
      } catch (...) {
        c.status = "error";
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t n = std::min(spec.jobs, cells.size());
    for (std::size_t w = 1; w < n; ++w) pool.emplace_back(worker);
    worker();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& c : cells) {
    manifest.push_back({{"policy", policy_name(c.policy)},
                        {"seed", c.seed},
                        {"dir", fs::relative(c.dir, spec.out_dir).generic_string()},
                        {"status", c.status}});
  }
  write_text(spec.out_dir / "grid.json", manifest.dump(2) + "\n");
  return cells;
}

// ---------------------------------------------------------------- compare

enum class CompareMetric { kFinal, kBest };

inline double metric_value(const RunRecord& rec, CompareMetric m) {
  return m == CompareMetric::kFinal ? rec.final_accuracy : rec.best_accuracy;
}

/// Sample standard deviation of test accuracy over the last `window` epochs.
inline double final_window_stddev(const RunRecord& rec, std::size_t window = 5) {
  const std::size_t n = std::min(window, rec.epochs.size());
  std::vector<double> acc;
  for (std::size_t i = rec.epochs.size() - n; i < rec.epochs.size(); ++i) acc.push_back(rec.epochs[i].test_accuracy);
  return sample_stddev(acc);
}

struct CompareRow {
  std::string policy;
  std::string baseline;
  std::size_t pairs = 0;
  double mean_treatment = 0.0;
  double mean_baseline = 0.0;
  PairedTTest test;
  double stability_treatment = 0.0;  // mean final-window stddev
  double stability_baseline = 0.0;
};

/// Paired t-test of `treatment` against `baseline`, matched by seeds and
/// task. Differences are treatment - baseline.
inline CompareRow compare_policies(const std::vector<RunRecord>& treatment, const std::vector<RunRecord>& baseline,
                                   CompareMetric metric = CompareMetric::kFinal) {
  if (treatment.empty()) throw InputError("compare: no treatment records");
  if (treatment.size() != baseline.size()) {
    throw InputError("compare: " + std::to_string(treatment.size()) + " treatment records vs " +
                     std::to_string(baseline.size()) + " baseline records");
  }
  CompareRow row;
  row.policy = treatment.front().policy;
  row.baseline = baseline.front().policy;
  row.pairs = treatment.size();
  std::vector<double> t, b;
  for (const RunRecord& r : treatment) {
    auto match = std::find_if(baseline.begin(), baseline.end(), [&](const RunRecord& x) {
      return x.seeds.data == r.seeds.data && x.seeds.init == r.seeds.init && x.task == r.task;
    });
    if (match == baseline.end()) {
      throw InputError("compare: no baseline run matches " + r.policy + " with data seed " +
                       std::to_string(r.seeds.data) + ", init seed " + std::to_string(r.seeds.init));
    }
    t.push_back(metric_value(r, metric));
    b.push_back(metric_value(*match, metric));
    row.stability_treatment += final_window_stddev(r) / static_cast<double>(row.pairs);
    row.stability_baseline += final_window_stddev(*match) / static_cast<double>(row.pairs);
  }
  row.mean_treatment = mean(t);
  row.mean_baseline = mean(b);
  row.test = paired_t_test(t, b);
  return row;
}

/// Load every completed run under a grid directory, grouped by policy.
inline std::map<std::string, std::vector<RunRecord>> load_grid(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::map<std::string, std::vector<RunRecord>> out;
  std::vector<fs::path> runs;
  for (const auto& policy_dir : fs::directory_iterator(dir)) {
    if (!policy_dir.is_directory()) continue;
    for (const auto& run : fs::directory_iterator(policy_dir.path())) {
      if (run.is_directory() && fs::exists(run.path() / "summary.json")) runs.push_back(run.path());
    }
  }
  std::sort(runs.begin(), runs.end());
  for (const auto& r : runs) {
    RunRecord rec = load_run_record(r);
    if (rec.status != "ok") continue;
    out[rec.policy].push_back(std::move(rec));
  }
  return out;
}

inline nlohmann::json compare_json(const std::vector<CompareRow>& rows, CompareMetric metric) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"policy", r.policy},
                   {"baseline", r.baseline},
                   {"metric", metric == CompareMetric::kFinal ? "final" : "best"},
                   {"pairs", r.pairs},
                   {"mean_treatment", r.mean_treatment},
                   {"mean_baseline", r.mean_baseline},
                   {"mean_diff", r.test.mean_diff},
                   {"sd_diff", r.test.sd_diff},
                   {"t", std::isfinite(r.test.t) ? nlohmann::json(r.test.t)
                                                 : nlohmann::json(r.test.t > 0 ? "inf" : "-inf")},
                   {"p_value", r.test.p_value},
                   {"degenerate", r.test.degenerate},
                   {"stability_treatment", r.stability_treatment},
                   {"stability_baseline", r.stability_baseline}});
  }
  return arr;
}

inline std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "policy,baseline,pairs,mean_treatment,mean_baseline,mean_diff,t,p_value,degenerate\n";
  for (const auto& r : rows) {
    os << r.policy << ',' << r.baseline << ',' << r.pairs << ',' << format_number(r.mean_treatment) << ','
       << format_number(r.mean_baseline) << ',' << format_number(r.test.mean_diff) << ','
       << format_number(r.test.t) << ',' << format_number(r.test.p_value) << ','
       << (r.test.degenerate ? "true" : "false") << '\n';
  }
  return os.str();
}

/// Compare every policy in a grid directory against `baseline` and write
/// compare.json / compare.csv next to the runs.
inline std::vector<CompareRow> compare_grid(const std::filesystem::path& dir, const std::string& baseline = "sft",
                                            CompareMetric metric = CompareMetric::kFinal) {
  const auto groups = load_grid(dir);
  const auto base = groups.find(baseline);
  if (base == groups.end()) throw InputError(dir.string() + ": no completed runs for baseline '" + baseline + "'");
  std::vector<CompareRow> rows;
  for (const auto& [policy, recs] : groups) {
    if (policy == baseline) continue;
    rows.push_back(compare_policies(recs, base->second, metric));
  }
  write_text(dir / "compare.json", compare_json(rows, metric).dump(2) + "\n");
  write_text(dir / "compare.csv", compare_csv(rows));
  return rows;
}

}  // namespace gradmask
