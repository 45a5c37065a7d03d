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

// Experiment driver: optional masked-token pretraining, masked fine-tuning,
// per-epoch metrics, and plot-ready exports.
//
// Files written to RunConfig::output_dir:
//   config.json           resolved configuration
//   metrics.jsonl         one object per epoch, flushed as written
//   timing.jsonl          wall-clock seconds per epoch (kept out of
//                         metrics.jsonl so metrics stay byte-reproducible)
//   summary.json          best / final accuracy and run status
//   timeline_layers.csv   encoder layer x epoch active-gradient fractions
//   timeline_metrics.csv  epoch x (train_loss, test_accuracy, p_effective)
//   pretrained.ckpt       after pretraining (when enabled)
//   final.ckpt            parameters after the last epoch

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gradmask/autodiff.hpp"
#include "gradmask/checkpoint.hpp"
#include "gradmask/config.hpp"
#include "gradmask/errors.hpp"
#include "gradmask/mask.hpp"
#include "gradmask/optim.hpp"
#include "gradmask/rng.hpp"
#include "gradmask/tasks.hpp"
#include "gradmask/transformer.hpp"

namespace gradmask {

struct EpochEntry {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double p_effective = 0.0;
  std::vector<double> active_fraction;  // per layer slot 0..L+1
  double wall_seconds = 0.0;
};

struct RunRecord {
  std::string policy;
  std::string task;
  Seeds seeds;
  std::size_t encoder_layers = 0;
  std::vector<EpochEntry> epochs;
  std::string status = "ok";
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;
  double final_accuracy = 0.0;

  void summarize() {
    best_accuracy = 0.0;
    best_epoch = 0;
    for (const auto& e : epochs) {
      if (best_epoch == 0 || e.test_accuracy > best_accuracy) {
        best_accuracy = e.test_accuracy;
        best_epoch = e.epoch;
      }
    }
    final_accuracy = epochs.empty() ? 0.0 : epochs.back().test_accuracy;
  }
};

// ---------------------------------------------------------------- records I/O

inline nlohmann::json epoch_json(const RunRecord& rec, const EpochEntry& e) {
  return {{"epoch", e.epoch},
          {"policy", rec.policy},
          {"p_effective", e.p_effective},
          {"train_loss", e.train_loss},
          {"test_accuracy", e.test_accuracy},
          {"active_fraction", e.active_fraction}};
}

inline nlohmann::json summary_json(const RunRecord& rec) {
  return {{"policy", rec.policy},
          {"task", rec.task},
          {"seeds", {{"data", rec.seeds.data}, {"init", rec.seeds.init}, {"mask", rec.seeds.mask}}},
          {"encoder_layers", rec.encoder_layers},
          {"status", rec.status},
          {"epochs_completed", rec.epochs.size()},
          {"best_accuracy", rec.best_accuracy},
          {"best_epoch", rec.best_epoch},
          {"final_accuracy", rec.final_accuracy}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(path.string() + ": cannot open for writing");
  os << text;
  if (!os) throw IoError(path.string() + ": write failed");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string() + ": cannot open");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

/// Rebuild a RunRecord from a run directory (summary.json + metrics.jsonl).
inline RunRecord load_run_record(const std::filesystem::path& dir) {
  const auto s = read_json(dir / "summary.json");
  RunRecord rec;
  try {
    rec.policy = s.at("policy").get<std::string>();
    rec.task = s.at("task").get<std::string>();
    rec.seeds.data = s.at("seeds").at("data").get<std::uint64_t>();
    rec.seeds.init = s.at("seeds").at("init").get<std::uint64_t>();
    rec.seeds.mask = s.at("seeds").at("mask").get<std::uint64_t>();
    rec.encoder_layers = s.at("encoder_layers").get<std::size_t>();
    rec.status = s.at("status").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError((dir / "summary.json").string() + ": " + e.what());
  }
  std::ifstream is(dir / "metrics.jsonl");
  if (!is) throw IoError((dir / "metrics.jsonl").string() + ": cannot open");
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw InputError((dir / "metrics.jsonl").string() + ": malformed line");
    if (j.contains("status")) continue;  // diagnostic record
    EpochEntry e;
    e.epoch = j.at("epoch").get<std::size_t>();
    e.train_loss = j.at("train_loss").get<double>();
    e.test_accuracy = j.at("test_accuracy").get<double>();
    e.p_effective = j.at("p_effective").get<double>();
    e.active_fraction = j.at("active_fraction").get<std::vector<double>>();
    rec.epochs.push_back(std::move(e));
  }
  rec.summarize();
  return rec;
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// timeline_layers.csv: "layer,epoch_1,...,epoch_T", one row per encoder
/// layer (1..L). timeline_metrics.csv: "epoch,train_loss,test_accuracy,p_effective".
inline void export_timeline(const RunRecord& rec, const std::filesystem::path& dir) {
  std::ostringstream layers;
  layers << "layer";
  for (const auto& e : rec.epochs) layers << ",epoch_" << e.epoch;
  layers << '\n';
  for (std::size_t l = 1; l <= rec.encoder_layers; ++l) {
    layers << l;
    for (const auto& e : rec.epochs) layers << ',' << format_number(e.active_fraction.at(l));
    layers << '\n';
  }
  write_text(dir / "timeline_layers.csv", layers.str());

  std::ostringstream metrics;
  metrics << "epoch,train_loss,test_accuracy,p_effective\n";
  for (const auto& e : rec.epochs) {
    metrics << e.epoch << ',' << format_number(e.train_loss) << ',' << format_number(e.test_accuracy) << ','
            << format_number(e.p_effective) << '\n';
  }
  write_text(dir / "timeline_metrics.csv", metrics.str());
}

// ---------------------------------------------------------------- training

/// Mean cross-entropy over the sequences `idx` of `data`, built on the tape
/// the parameter handles `vars` belong to.
inline Var batch_loss(const Transformer& model, const std::vector<Var>& vars, const Dataset& data,
                      std::span<const std::size_t> idx) {
  std::vector<Var> logits;
  std::vector<std::size_t> labels;
  logits.reserve(idx.size());
  for (std::size_t i : idx) {
    logits.push_back(model.classify(vars, data.sequences[i]));
    labels.push_back(data.labels[i]);
  }
  return cross_entropy(concat_rows(logits), labels);
}

inline std::size_t argmax(std::span<const double> xs) {
  return static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

inline double evaluate_accuracy(Transformer& model, const Dataset& data) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor logits = model.forward_classify(data.sequences[i]);
    if (argmax(logits.data()) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(stream_key(seed, "shuffle"), epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

inline void allocate_grads(ParamSet& params) {
  for (auto& p : params) p.tensor.grad();
}

/// Masked-token pretraining on the synthetic Markov language. A throwaway
/// d x vocab prediction head is trained alongside and discarded. Returns the
/// mean masked-token loss of each pretraining epoch.
inline std::vector<double> pretrain(Transformer& model, const RunConfig& cfg) {
  const ModelConfig& mc = model.config();
  const Dataset corpus = gen_synthetic_language(cfg.data_vocab(), mc.max_len, cfg.pretrain.corpus_size, cfg.seeds.data);
  ParamSet head;
  {
    Tensor w({mc.d_model, mc.vocab});
    init_uniform(w, 1.0 / std::sqrt(static_cast<double>(mc.d_model)), cfg.seeds.init, "pretrain.head.weight");
    head.add("pretrain.head.weight", mc.layers + 1, std::move(w), false);
    head.add("pretrain.head.bias", mc.layers + 1, Tensor({mc.vocab}), false);
  }
  const OptimConfig ocfg{cfg.pretrain.lr, cfg.pretrain.momentum, 0.0};
  MaskedSgd body_opt(ocfg), head_opt(ocfg);
  const std::size_t bs = cfg.train.batch_size;
  std::vector<double> epoch_losses;

  for (std::size_t epoch = 1; epoch <= cfg.pretrain.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t batches = 0;
    const auto order = shuffled_indices(corpus.size(), cfg.seeds.data ^ 0x5052455452ull, epoch);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      Tape tape;
      const auto vars = model.bind(tape);
      const Var hw = tape.parameter(head[0].tensor);
      const Var hb = tape.parameter(head[1].tensor);
      std::vector<Var> rows;
      std::vector<std::size_t> targets;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t s = order[b];
        Sequence input = corpus.sequences[s];
        CounterRng rng(stream_key(cfg.seeds.data, "pretrain/mask"), stream_id(static_cast<std::uint32_t>(epoch),
                                                                              static_cast<std::uint32_t>(s)));
        std::vector<std::size_t> positions;
        for (std::size_t t = 0; t < input.size(); ++t) {
          if (rng.bernoulli(cfg.pretrain.mask_rate)) positions.push_back(t);
        }
        if (positions.empty()) positions.push_back(rng.below(input.size()));
        for (std::size_t t : positions) {
          targets.push_back(input[t]);
          input[t] = cfg.mask_token();
        }
        const Var hidden = model.encode(vars, input);
        rows.push_back(gather_rows(hidden, positions));
      }
      const Var logits = add_row(matmul(concat_rows(rows), hw), hb);
      const Var loss = cross_entropy(logits, targets);
      if (!std::isfinite(loss.value()[0])) throw NumericalError("pretraining loss is not finite");
      loss_sum += loss.value()[0];
      ++batches;
      tape.backward(loss);
      allocate_grads(model.params());
      body_opt.step_unmasked(model.params());
      head_opt.step_unmasked(head);
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(batches));
  }
  return epoch_losses;
}

/// Build the model for `cfg`, pretraining (or loading the cached pretrained
/// checkpoint) when enabled. The classifier head is re-drawn afterwards.
inline Transformer prepare_model(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  Transformer model(cfg.model, cfg.seeds.init);
  if (!cfg.pretrain.enabled) return model;
  const std::string& cached = cfg.pretrain.checkpoint;
  if (!cached.empty() && std::filesystem::exists(cached)) {
    load_checkpoint(model.params(), cached);
  } else {
    pretrain(model, cfg);
    if (!cached.empty()) save_checkpoint(model.params(), cached);
  }
  if (!out_dir.empty()) save_checkpoint(model.params(), (out_dir / "pretrained.ckpt").string());
  model.reset_head(cfg.seeds.init);
  return model;
}

struct RunOptions {
  bool write_files = true;
  bool verbose = false;
  /// Called after every optimizer step with (epoch, step, mask applied);
  /// the mask pointer is null on the maskless path.
  std::function<void(std::size_t, std::size_t, const GradMask*, const Transformer&, double)> on_step;
  std::size_t max_steps = 0;  // stop after this many optimizer steps (0 = no limit)
};

inline RunRecord run_experiment(const RunConfig& cfg, const RunOptions& opts = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path out = cfg.output_dir;
  if (opts.write_files) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError(out.string() + ": cannot create output directory: " + ec.message());
    write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
  }

  const MaskPolicy policy = cfg.effective_policy();
  const auto [train, test] = gen_task_splits(cfg.train.task, cfg.data_vocab(), cfg.model.max_len,
                                             cfg.train.train_size, cfg.train.test_size, cfg.seeds.data);
  Transformer model = prepare_model(cfg, opts.write_files ? out : fs::path{});
  ParamSet& params = model.params();

  RunRecord rec;
  rec.policy = std::string(policy_name(policy.kind));
  rec.task = std::string(task_name(cfg.train.task));
  rec.seeds = cfg.seeds;
  rec.encoder_layers = cfg.model.layers;

  std::ofstream metrics, timing;
  if (opts.write_files) {
    metrics.open(out / "metrics.jsonl", std::ios::trunc);
    timing.open(out / "timing.jsonl", std::ios::trunc);
    if (!metrics || !timing) throw IoError(out.string() + ": cannot open metrics files");
  }
  auto finish_files = [&] {
    if (!opts.write_files) return;
    rec.summarize();
    write_text(out / "summary.json", summary_json(rec).dump(2) + "\n");
    export_timeline(rec, out);
  };

  MaskState mstate(cfg.seeds.mask);
  MaskedSgd opt(cfg.optim);
  const std::size_t slots = params.layer_count();
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= policy.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::optional<GradMask> epoch_mask = advance_epoch(mstate, policy, params);
    const auto order = shuffled_indices(train.size(), cfg.seeds.data, epoch);

    EpochEntry entry;
    entry.epoch = epoch;
    entry.p_effective = mstate.p_effective(policy);
    std::vector<double> frac_sum(slots, 0.0);
    std::size_t batches = 0, seen = 0;
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < order.size(); start += cfg.train.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.train.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      Tape tape;
      const auto vars = model.bind(tape);
      const Var loss = batch_loss(model, vars, train, idx);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        rec.status = "nan_abort";
        if (opts.write_files) {
          metrics << nlohmann::json{{"epoch", epoch}, {"batch", batches}, {"status", "nan_abort"},
                                    {"policy", rec.policy}}.dump()
                  << '\n';
          metrics.flush();
        }
        finish_files();
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
      }
      tape.backward(loss);
      loss_sum += value * static_cast<double>(idx.size());
      seen += idx.size();

      if (!cfg.train.masking) {
        opt.step_unmasked(params);
        for (auto& f : frac_sum) f += 1.0;
        if (opts.on_step) opts.on_step(epoch, step, nullptr, model, value);
      } else {
        const GradMask mask = epoch_mask ? *epoch_mask : sample_batch_mask(mstate, policy, params);
        const auto frac = active_fraction(mask, params);
        for (std::size_t l = 0; l < slots; ++l) frac_sum[l] += frac[l];
        opt.step(params, mask);
        if (opts.on_step) opts.on_step(epoch, step, &mask, model, value);
      }
      ++batches;
      ++step;
      if (opts.max_steps && step >= opts.max_steps) break;
    }

    entry.train_loss = loss_sum / static_cast<double>(seen);
    entry.active_fraction.resize(slots);
    for (std::size_t l = 0; l < slots; ++l) entry.active_fraction[l] = frac_sum[l] / static_cast<double>(batches);
    entry.test_accuracy = evaluate_accuracy(model, test);
    entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.epochs.push_back(entry);

    if (opts.write_files) {
      metrics << epoch_json(rec, entry).dump() << '\n';
      metrics.flush();
      timing << nlohmann::json{{"epoch", epoch}, {"wall_seconds", entry.wall_seconds}}.dump() << '\n';
      timing.flush();
    }
    if (opts.verbose) {
      std::fprintf(stderr, "[%s seed=%llu] epoch %zu loss %.4f acc %.4f (%.1fs)\n", rec.policy.c_str(),
                   static_cast<unsigned long long>(cfg.seeds.mask), epoch, entry.train_loss, entry.test_accuracy,
                   entry.wall_seconds);
    }
    if (opts.max_steps && step >= opts.max_steps) break;
  }

  rec.summarize();
  if (opts.write_files) {
    save_checkpoint(params, (out / "final.ckpt").string());
    finish_files();
  }
  return rec;
}

}  // namespace gradmask
