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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gradmask/grid.hpp"
#include "gradmask/harness.hpp"

namespace gradmask {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "gradmask_harness_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

RunConfig tiny_config(PolicyKind kind = PolicyKind::kSft, std::size_t epochs = 4) {
  RunConfig cfg;
  cfg.model.d_model = cfg.model.out_dim = 8;
  cfg.model.key_dim = 4;
  cfg.model.heads = 2;
  cfg.model.head_dim = 4;
  cfg.model.layers = 4;
  cfg.model.vocab = 12;
  cfg.model.max_len = 6;
  cfg.policy.kind = kind;
  cfg.train.epochs = epochs;
  cfg.train.batch_size = 16;
  cfg.train.train_size = 64;
  cfg.train.test_size = 32;
  cfg.output_dir = "unused";
  return cfg;
}

RunOptions quiet_memory_run() {
  RunOptions o;
  o.write_files = false;
  return o;
}

// ---------------------------------------------------------------- config

TEST(RunConfigJson, RoundTripsEveryField) {
  RunConfig cfg = tiny_config(PolicyKind::kFreezeBottomUp);
  cfg.policy.p = 0.35;
  cfg.policy.layers_per_epoch = 2;
  cfg.policy.scale_grads = false;
  cfg.optim.weight_decay = 1e-3;
  cfg.train.task = TaskKind::kWindowedParity;
  cfg.pretrain.enabled = true;
  cfg.pretrain.checkpoint = "x.ckpt";
  cfg.seeds = {4, 5, 6};
  const RunConfig back = run_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
}

TEST(RunConfigJson, UnknownKeysAreErrors) {
  nlohmann::json j = to_json(RunConfig{});
  j["model"]["dropout"] = 0.1;
  EXPECT_THROW(run_config_from_json(j), ConfigError);
  nlohmann::json top = to_json(RunConfig{});
  top["extra"] = 1;
  EXPECT_THROW(run_config_from_json(top), ConfigError);
}

TEST(RunConfigJson, VersionAndTypesAreChecked) {
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"model", {{"layers", 2}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"version", 2}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"version", 1}, {"train", {{"epochs", "ten"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"version", 1}, {"train", {{"epochs", -3}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"version", 1}, {"train", {{"epochs", 2.5}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"version", 1}, {"policy", {{"kind", "magic"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"version", 1}, {"policy", {{"p", 1.0}}}}), ConfigError);
}

TEST(RunConfigJson, AbsentFieldsTakeDefaults) {
  const RunConfig cfg = run_config_from_json(nlohmann::json{{"version", 1}, {"train", {{"epochs", 7}}}});
  EXPECT_EQ(cfg.train.epochs, 7u);
  EXPECT_EQ(cfg.effective_policy().epochs, 7u);
  EXPECT_EQ(cfg.model.layers, 4u);
  EXPECT_EQ(cfg.model.d_model, 32u);
  EXPECT_EQ(cfg.train.train_size, 2000u);
}

TEST(RunConfigJson, MissingFileIsIoError) {
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), IoError);
}

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = scratch("ckpt");
  Transformer a(tiny_config().model, 3), b(tiny_config().model, 4);
  save_checkpoint(a.params(), (dir / "a.ckpt").string());
  load_checkpoint(b.params(), (dir / "a.ckpt").string());
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].tensor, b.params()[i].tensor);
  EXPECT_EQ(slurp(dir / "a.ckpt").rfind("gradmask-checkpoint 1\n", 0), 0u);
}

TEST(Checkpoint, ShapeMismatchAndGarbageAreIoErrors) {
  const fs::path dir = scratch("ckpt_bad");
  Transformer a(tiny_config().model, 3);
  save_checkpoint(a.params(), (dir / "a.ckpt").string());
  ModelConfig wider = tiny_config().model;
  wider.d_model = wider.out_dim = 12;
  Transformer b(wider, 3);
  EXPECT_THROW(load_checkpoint(b.params(), (dir / "a.ckpt").string()), IoError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(a.params(), (dir / "junk.ckpt").string()), IoError);
  EXPECT_THROW(load_checkpoint(a.params(), (dir / "missing.ckpt").string()), IoError);
}

// ---------------------------------------------------------------- runs

TEST(RunExperiment, SingleSampleStepMovesExactlyParametersWithGradient) {
  RunConfig cfg = tiny_config(PolicyKind::kSft, 1);
  cfg.train.train_size = 1;
  cfg.train.batch_size = 1;
  cfg.optim = {0.1, 0.0, 0.0};

  // Independent gradient of the single training example.
  Transformer probe(cfg.model, cfg.seeds.init);
  const auto [train, test] = gen_task_splits(cfg.train.task, cfg.data_vocab(), cfg.model.max_len, 1,
                                             cfg.train.test_size, cfg.seeds.data);
  {
    Tape tape;
    const auto vars = probe.bind(tape);
    const std::vector<std::size_t> idx{0};
    tape.backward(batch_loss(probe, vars, train, idx));
  }
  std::vector<std::vector<double>> after;
  RunOptions opts = quiet_memory_run();
  opts.on_step = [&](std::size_t, std::size_t, const GradMask*, const Transformer& m, double) {
    for (const auto& p : m.params()) after.push_back(p.tensor.values());
  };
  run_experiment(cfg, opts);
  ASSERT_EQ(after.size(), probe.params().size());
  std::size_t moved = 0, still = 0;
  for (std::size_t i = 0; i < after.size(); ++i) {
    const Param& p = probe.params()[i];
    for (std::size_t j = 0; j < p.tensor.size(); ++j) {
      const bool changed = after[i][j] != p.tensor[j];
      EXPECT_EQ(changed, p.tensor.grad()[j] != 0.0) << p.name << "[" << j << "]";
      (changed ? moved : still)++;
    }
  }
  EXPECT_GT(moved, 0u);
  EXPECT_GT(still, 0u);  // e.g. embedding rows of tokens absent from the sample
}

TEST(RunExperiment, NearCertainDropFreezesAlmostEverything) {
  RunConfig cfg = tiny_config(PolicyKind::kGradDrop, 1);
  cfg.policy.p = 0.999;
  const Transformer initial(cfg.model, cfg.seeds.init);
  RunOptions opts = quiet_memory_run();
  opts.max_steps = 1;
  std::size_t maskable = 0, active = 0, frozen_moved = 0;
  opts.on_step = [&](std::size_t, std::size_t, const GradMask* m, const Transformer& model, double) {
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      const Param& p = model.params()[i];
      if (!p.maskable) continue;
      for (std::size_t j = 0; j < p.tensor.size(); ++j) {
        ++maskable;
        if (m->support[i].active(j)) {
          ++active;
        } else {
          frozen_moved += p.tensor[j] != initial.params()[i].tensor[j];
        }
      }
    }
  };
  run_experiment(cfg, opts);
  EXPECT_EQ(frozen_moved, 0u);
  EXPECT_LT(static_cast<double>(active), 0.01 * static_cast<double>(maskable));
}

TEST(RunExperiment, RepeatRunsAreByteIdentical) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  RunConfig cfg = tiny_config(PolicyKind::kGradDrop, 3);
  cfg.output_dir = a.string();
  run_experiment(cfg);
  cfg.output_dir = b.string();
  run_experiment(cfg);
  for (const char* f : {"metrics.jsonl", "summary.json", "timeline_layers.csv", "timeline_metrics.csv", "final.ckpt"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(RunExperiment, MetricsAreOneParseableLinePerEpoch) {
  const fs::path dir = scratch("metrics");
  RunConfig cfg = tiny_config(PolicyKind::kAnnealGradDrop, 4);
  cfg.output_dir = dir.string();
  const RunRecord rec = run_experiment(cfg);
  std::ifstream is(dir / "metrics.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    ++n;
    EXPECT_EQ(j.at("epoch").get<std::size_t>(), n);
    EXPECT_EQ(j.at("p_effective").get<double>(), anneal_rate(n, 4));
    EXPECT_EQ(j.at("active_fraction").size(), 6u);
  }
  EXPECT_EQ(n, 4u);
  EXPECT_EQ(rec.epochs.size(), 4u);
  const RunRecord back = load_run_record(dir);
  EXPECT_EQ(back.best_accuracy, rec.best_accuracy);
  EXPECT_EQ(back.final_accuracy, rec.final_accuracy);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "timing.jsonl").substr(0, slurp(dir / "timing.jsonl").find('\n'))).at("epoch"), 1);
}

TEST(RunExperiment, RecordedFractionEqualsEpochMask) {
  RunConfig cfg = tiny_config(PolicyKind::kGradDropEpoch, 5);
  const RunRecord rec = run_experiment(cfg, quiet_memory_run());
  Transformer model(cfg.model, cfg.seeds.init);
  MaskState state(cfg.seeds.mask);
  for (const auto& e : rec.epochs) {
    const GradMask m = *advance_epoch(state, cfg.effective_policy(), model.params());
    EXPECT_EQ(e.active_fraction, active_fraction(m, model.params()));
  }
}

TEST(RunExperiment, PerBatchFractionIsMeanOverBatchMasks) {
  RunConfig cfg = tiny_config(PolicyKind::kLayerGradDrop, 2);
  cfg.policy.p = 0.5;
  std::vector<std::vector<double>> sums(2, std::vector<double>(6, 0.0));
  std::vector<double> batches(2, 0.0);
  RunOptions opts = quiet_memory_run();
  opts.on_step = [&](std::size_t epoch, std::size_t, const GradMask* m, const Transformer& model, double) {
    const auto f = active_fraction(*m, model.params());
    for (std::size_t l = 0; l < 6; ++l) sums[epoch - 1][l] += f[l];
    batches[epoch - 1] += 1.0;
  };
  const RunRecord rec = run_experiment(cfg, opts);
  for (std::size_t e = 0; e < 2; ++e)
    for (std::size_t l = 0; l < 6; ++l) EXPECT_DOUBLE_EQ(rec.epochs[e].active_fraction[l], sums[e][l] / batches[e]);
}

TEST(RunExperiment, NonFiniteLossAbortsWithDiagnostic) {
  const fs::path dir = scratch("nan");
  RunConfig cfg = tiny_config(PolicyKind::kSft, 3);
  cfg.optim.lr = 1e200;
  cfg.output_dir = dir.string();
  EXPECT_THROW(run_experiment(cfg), NumericalError);
  EXPECT_NE(slurp(dir / "metrics.jsonl").find("\"status\":\"nan_abort\""), std::string::npos);
  EXPECT_EQ(read_json(dir / "summary.json").at("status"), "nan_abort");
}

TEST(RunExperiment, UnwritableOutputIsIoErrorWithPath) {
  const fs::path dir = scratch("blocked");
  std::ofstream(dir / "file") << "x";
  RunConfig cfg = tiny_config();
  cfg.output_dir = (dir / "file" / "run").string();
  try {
    run_experiment(cfg);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("file/run"), std::string::npos);
  }
}

TEST(RunExperiment, PretrainedCheckpointIsCachedAndReused) {
  const fs::path dir = scratch("pretrain");
  RunConfig cfg = tiny_config(PolicyKind::kSft, 1);
  cfg.pretrain.enabled = true;
  cfg.pretrain.corpus_size = 32;
  cfg.pretrain.epochs = 1;
  cfg.pretrain.checkpoint = (dir / "shared.ckpt").string();
  cfg.output_dir = (dir / "run").string();
  Transformer fresh(cfg.model, cfg.seeds.init);
  const auto losses = pretrain(fresh, cfg);
  ASSERT_EQ(losses.size(), 1u);
  EXPECT_TRUE(std::isfinite(losses[0]));
  const RunRecord first = run_experiment(cfg);
  ASSERT_TRUE(fs::exists(dir / "shared.ckpt"));
  EXPECT_EQ(slurp(dir / "shared.ckpt"), slurp(dir / "run" / "pretrained.ckpt"));
  const RunRecord second = run_experiment(cfg);
  EXPECT_EQ(first.final_accuracy, second.final_accuracy);
}

// ---------------------------------------------------------------- timelines

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream is(p);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

TEST(Timeline, SftIsAllOnes) {
  const fs::path dir = scratch("tl_sft");
  RunConfig cfg = tiny_config(PolicyKind::kSft, 3);
  cfg.output_dir = dir.string();
  run_experiment(cfg);
  const auto rows = read_csv(dir / "timeline_layers.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"layer", "epoch_1", "epoch_2", "epoch_3"}));
  for (std::size_t r = 1; r < rows.size(); ++r)
    for (std::size_t c = 1; c < rows[r].size(); ++c) EXPECT_EQ(rows[r][c], "1");
  EXPECT_EQ(read_csv(dir / "timeline_metrics.csv")[0],
            (std::vector<std::string>{"epoch", "train_loss", "test_accuracy", "p_effective"}));
}

TEST(Timeline, FreezeTopDownIsTriangular) {
  const fs::path dir = scratch("tl_freeze");
  RunConfig cfg = tiny_config(PolicyKind::kFreezeTopDown, 4);
  cfg.policy.layers_per_epoch = 1;
  cfg.output_dir = dir.string();
  run_experiment(cfg);
  const auto rows = read_csv(dir / "timeline_layers.csv");
  for (std::size_t layer = 1; layer <= 4; ++layer) {
    for (std::size_t epoch = 1; epoch <= 4; ++epoch) {
      const bool on = layer + epoch >= 5;  // top layer first
      EXPECT_EQ(rows[layer][epoch], on ? "1" : "0") << "layer " << layer << " epoch " << epoch;
    }
  }
}

TEST(Timeline, GradDropEpochColumnMeansGrowByFifths) {
  const fs::path dir = scratch("tl_epoch");
  RunConfig cfg = tiny_config(PolicyKind::kGradDropEpoch, 5);
  cfg.output_dir = dir.string();
  run_experiment(cfg);
  const auto rows = read_csv(dir / "timeline_layers.csv");
  Transformer model(cfg.model, cfg.seeds.init);
  // One entry of rounding per tensor, relative to the smallest layer.
  std::size_t tensors = 0, entries = 0;
  for (const auto& p : model.params()) {
    if (p.layer == 1) {
      ++tensors;
      entries += p.tensor.size();
    }
  }
  const double tol = static_cast<double>(tensors) / static_cast<double>(entries);
  for (std::size_t epoch = 1; epoch <= 5; ++epoch) {
    double col = 0.0;
    for (std::size_t layer = 1; layer <= 4; ++layer) col += std::stod(rows[layer][epoch]) / 4.0;
    EXPECT_NEAR(col, 0.2 * static_cast<double>(epoch), tol) << "epoch " << epoch;
  }
}

TEST(Timeline, ExportRebuildsFromRunDirectory) {
  const fs::path dir = scratch("tl_export");
  RunConfig cfg = tiny_config(PolicyKind::kLayerGradDrop, 2);
  cfg.output_dir = dir.string();
  run_experiment(cfg);
  const fs::path dest = scratch("tl_export_out");
  export_timeline(load_run_record(dir), dest);
  EXPECT_EQ(slurp(dest / "timeline_layers.csv"), slurp(dir / "timeline_layers.csv"));
  EXPECT_EQ(slurp(dest / "timeline_metrics.csv"), slurp(dir / "timeline_metrics.csv"));
}

// ---------------------------------------------------------------- compare

RunRecord fake_record(const std::string& policy, std::uint64_t seed, std::vector<double> acc) {
  RunRecord r;
  r.policy = policy;
  r.task = "majority-token";
  r.seeds = {seed, seed, seed};
  for (std::size_t i = 0; i < acc.size(); ++i) {
    EpochEntry e;
    e.epoch = i + 1;
    e.test_accuracy = acc[i];
    r.epochs.push_back(e);
  }
  r.summarize();
  return r;
}

TEST(Compare, IdenticalRecordsGiveDegenerateZero) {
  const std::vector<RunRecord> a{fake_record("graddrop", 0, {0.5, 0.9}), fake_record("graddrop", 1, {0.6, 0.8})};
  const std::vector<RunRecord> b{fake_record("sft", 0, {0.5, 0.9}), fake_record("sft", 1, {0.6, 0.8})};
  const CompareRow row = compare_policies(a, b);
  EXPECT_EQ(row.test.t, 0.0);
  EXPECT_TRUE(row.test.degenerate);
}

TEST(Compare, MatchesBySeedsNotOrder) {
  const std::vector<RunRecord> a{fake_record("graddrop", 1, {0.9}), fake_record("graddrop", 0, {0.7}),
                                 fake_record("graddrop", 2, {1.0})};
  const std::vector<RunRecord> b{fake_record("sft", 0, {0.6}), fake_record("sft", 1, {0.7}),
                                 fake_record("sft", 2, {0.7})};
  const CompareRow row = compare_policies(a, b);
  EXPECT_NEAR(row.test.mean_diff, (0.2 + 0.1 + 0.3) / 3.0, 1e-15);
}

TEST(Compare, UnmatchedPairsAreInputErrors) {
  const std::vector<RunRecord> a{fake_record("graddrop", 0, {0.9}), fake_record("graddrop", 5, {0.9})};
  const std::vector<RunRecord> b{fake_record("sft", 0, {0.9}), fake_record("sft", 1, {0.9})};
  EXPECT_THROW(compare_policies(a, b), InputError);
  EXPECT_THROW(compare_policies(a, {b[0]}), InputError);
}

TEST(Compare, StabilityIsStddevOfFinalWindow) {
  const RunRecord r = fake_record("sft", 0, {0.1, 0.5, 0.6, 0.7, 0.8, 0.9});
  EXPECT_NEAR(final_window_stddev(r, 5), std::sqrt(0.025), 1e-12);
}

TEST(Grid, SweepWritesCellsManifestAndComparison) {
  const fs::path dir = scratch("grid");
  GridSpec spec;
  spec.base = tiny_config(PolicyKind::kSft, 2);
  spec.policies = {PolicyKind::kSft, PolicyKind::kGradDrop};
  spec.seeds = {0, 1};
  spec.jobs = 2;
  spec.out_dir = dir;
  const auto cells = run_grid(spec);
  ASSERT_EQ(cells.size(), 4u);
  for (const auto& c : cells) {
    EXPECT_EQ(c.status, "ok");
    EXPECT_TRUE(fs::exists(c.dir / "metrics.jsonl"));
    EXPECT_EQ(c.record.seeds, cell_seeds(spec.base.seeds, c.seed));
  }
  EXPECT_TRUE(fs::exists(dir / "graddrop" / "seed_1" / "summary.json"));
  EXPECT_EQ(read_json(dir / "grid.json").size(), 4u);
  const auto rows = compare_grid(dir);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].policy, "graddrop");
  EXPECT_EQ(rows[0].pairs, 2u);
  EXPECT_TRUE(fs::exists(dir / "compare.csv"));

  // Same cell run alone (serially) reproduces the threaded sweep's bytes.
  const fs::path again = scratch("grid_again");
  RunConfig cfg = cell_config(spec, PolicyKind::kGradDrop, 1);
  cfg.output_dir = again.string();
  run_experiment(cfg);
  EXPECT_EQ(slurp(again / "metrics.jsonl"), slurp(dir / "graddrop" / "seed_1" / "metrics.jsonl"));
}

TEST(Grid, MissingBaselineIsInputError) {
  const fs::path dir = scratch("grid_nobase");
  GridSpec spec;
  spec.base = tiny_config(PolicyKind::kSft, 1);
  spec.policies = {PolicyKind::kGradDrop};
  spec.seeds = {0, 1};
  spec.out_dir = dir;
  run_grid(spec);
  EXPECT_THROW(compare_grid(dir), InputError);
}

}  // namespace
}  // namespace gradmask
