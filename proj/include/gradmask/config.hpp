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

// Run configuration: a versioned JSON document. Every field has a default;
// unknown keys and wrong types are ConfigErrors.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "gradmask/errors.hpp"
#include "gradmask/mask.hpp"
#include "gradmask/optim.hpp"
#include "gradmask/tasks.hpp"
#include "gradmask/transformer.hpp"

namespace gradmask {

inline constexpr int kRunConfigVersion = 1;

struct Seeds {
  std::uint64_t data = 1;
  std::uint64_t init = 1;
  std::uint64_t mask = 1;

  friend bool operator==(const Seeds&, const Seeds&) = default;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::size_t train_size = 2000;
  std::size_t test_size = 1000;
  TaskKind task = TaskKind::kMajorityToken;
  bool masking = true;  // false runs the maskless optimizer path
};

struct PretrainConfig {
  bool enabled = false;
  std::size_t corpus_size = 1000;
  std::size_t epochs = 5;
  double lr = 0.01;
  double momentum = 0.9;
  double mask_rate = 0.15;
  std::string checkpoint;  // reuse (or create) this pretrained checkpoint
};

struct RunConfig {
  ModelConfig model;
  MaskPolicy policy{PolicyKind::kSft};
  OptimConfig optim;
  TrainConfig train;
  PretrainConfig pretrain;
  Seeds seeds;
  std::string output_dir = "runs/default";

  /// The policy with T bound to the number of training epochs.
  MaskPolicy effective_policy() const {
    MaskPolicy p = policy;
    p.epochs = train.epochs;
    return p;
  }

  /// Token id reserved for masked-token pretraining; data uses [0, vocab - 1).
  std::size_t mask_token() const { return model.vocab - 1; }
  std::size_t data_vocab() const { return model.vocab - 1; }

  void validate() const {
    model.validate();
    effective_policy().validate();
    optim.validate();
    if (train.epochs < 1) throw ConfigError("train.epochs must be at least 1");
    if (train.batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (train.train_size < 1 || train.test_size < 1) throw ConfigError("train sizes must be positive");
    if (model.classes != task_classes(train.task)) {
      throw ConfigError("model.classes must be " + std::to_string(task_classes(train.task)) + " for task " +
                        std::string(task_name(train.task)));
    }
    if (data_vocab() < 4) throw ConfigError("model.vocab must be at least 5");
    if (model.max_len < 2) throw ConfigError("model.max_len must be at least 2");
    if (pretrain.enabled) {
      if (data_vocab() < 8) throw ConfigError("pretraining needs model.vocab >= 9");
      if (pretrain.corpus_size < 1 || pretrain.epochs < 1) throw ConfigError("pretrain sizes must be positive");
      if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.lr must be positive");
      if (!(pretrain.momentum >= 0.0 && pretrain.momentum < 1.0)) throw ConfigError("pretrain.momentum must lie in [0, 1)");
      if (!(pretrain.mask_rate > 0.0 && pretrain.mask_rate <= 1.0)) throw ConfigError("pretrain.mask_rate must lie in (0, 1]");
    }
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  }
};

// ---------------------------------------------------------------- JSON

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read_field(const json& obj, const char* key, const std::string& where, T& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string path = where + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(path + " must be a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(path + " must be a non-negative integer");
    }
    out = v.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(path + " must be a number");
    out = v.get<T>();
  } else {
    if (!v.is_string()) throw ConfigError(path + " must be a string");
    out = v.get<std::string>();
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["version"] = kRunConfigVersion;
  j["output_dir"] = c.output_dir;
  j["model"] = {{"d_model", c.model.d_model}, {"key_dim", c.model.key_dim}, {"out_dim", c.model.out_dim},
                {"heads", c.model.heads},     {"head_dim", c.model.head_dim}, {"layers", c.model.layers},
                {"vocab", c.model.vocab},     {"max_len", c.model.max_len}, {"classes", c.model.classes},
                {"ff_width", c.model.ff_width}};
  j["policy"] = {{"kind", std::string(policy_name(c.policy.kind))},
                 {"p", c.policy.p},
                 {"layers_per_epoch", c.policy.layers_per_epoch},
                 {"scale_grads", c.policy.scale_grads}};
  j["optim"] = {{"lr", c.optim.lr}, {"momentum", c.optim.momentum}, {"weight_decay", c.optim.weight_decay}};
  j["train"] = {{"epochs", c.train.epochs},         {"batch_size", c.train.batch_size},
                {"train_size", c.train.train_size}, {"test_size", c.train.test_size},
                {"task", std::string(task_name(c.train.task))}, {"masking", c.train.masking}};
  j["pretrain"] = {{"enabled", c.pretrain.enabled}, {"corpus_size", c.pretrain.corpus_size},
                   {"epochs", c.pretrain.epochs},   {"lr", c.pretrain.lr},
                   {"momentum", c.pretrain.momentum}, {"mask_rate", c.pretrain.mask_rate},
                   {"checkpoint", c.pretrain.checkpoint}};
  j["seeds"] = {{"data", c.seeds.data}, {"init", c.seeds.init}, {"mask", c.seeds.mask}};
  return j;
}

/// Overlay `j` onto `base`. The document must carry "version": 1.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  using detail::read_field;
  detail::reject_unknown(j, "", {"version", "output_dir", "model", "policy", "optim", "train", "pretrain", "seeds"});
  if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kRunConfigVersion) {
    throw ConfigError("config must declare \"version\": " + std::to_string(kRunConfigVersion));
  }
  RunConfig c = std::move(base);
  read_field(j, "output_dir", "", c.output_dir);
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::reject_unknown(m, "model", {"d_model", "key_dim", "out_dim", "heads", "head_dim", "layers", "vocab",
                                        "max_len", "classes", "ff_width"});
    read_field(m, "d_model", "model", c.model.d_model);
    read_field(m, "key_dim", "model", c.model.key_dim);
    read_field(m, "out_dim", "model", c.model.out_dim);
    read_field(m, "heads", "model", c.model.heads);
    read_field(m, "head_dim", "model", c.model.head_dim);
    read_field(m, "layers", "model", c.model.layers);
    read_field(m, "vocab", "model", c.model.vocab);
    read_field(m, "max_len", "model", c.model.max_len);
    read_field(m, "classes", "model", c.model.classes);
    read_field(m, "ff_width", "model", c.model.ff_width);
  }
  if (j.contains("policy")) {
    const auto& p = j["policy"];
    detail::reject_unknown(p, "policy", {"kind", "p", "layers_per_epoch", "scale_grads"});
    if (p.contains("kind")) {
      std::string name;
      read_field(p, "kind", "policy", name);
      const auto kind = parse_policy(name);
      if (!kind) throw ConfigError("unknown policy kind '" + name + "'");
      c.policy.kind = *kind;
    }
    read_field(p, "p", "policy", c.policy.p);
    read_field(p, "layers_per_epoch", "policy", c.policy.layers_per_epoch);
    read_field(p, "scale_grads", "policy", c.policy.scale_grads);
  }
  if (j.contains("optim")) {
    const auto& o = j["optim"];
    detail::reject_unknown(o, "optim", {"lr", "momentum", "weight_decay"});
    read_field(o, "lr", "optim", c.optim.lr);
    read_field(o, "momentum", "optim", c.optim.momentum);
    read_field(o, "weight_decay", "optim", c.optim.weight_decay);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::reject_unknown(t, "train", {"epochs", "batch_size", "train_size", "test_size", "task", "masking"});
    read_field(t, "epochs", "train", c.train.epochs);
    read_field(t, "batch_size", "train", c.train.batch_size);
    read_field(t, "train_size", "train", c.train.train_size);
    read_field(t, "test_size", "train", c.train.test_size);
    read_field(t, "masking", "train", c.train.masking);
    if (t.contains("task")) {
      std::string name;
      read_field(t, "task", "train", name);
      const auto kind = parse_task(name);
      if (!kind) throw ConfigError("unknown task '" + name + "'");
      c.train.task = *kind;
    }
  }
  if (j.contains("pretrain")) {
    const auto& p = j["pretrain"];
    detail::reject_unknown(p, "pretrain", {"enabled", "corpus_size", "epochs", "lr", "momentum", "mask_rate", "checkpoint"});
    read_field(p, "enabled", "pretrain", c.pretrain.enabled);
    read_field(p, "corpus_size", "pretrain", c.pretrain.corpus_size);
    read_field(p, "epochs", "pretrain", c.pretrain.epochs);
    read_field(p, "lr", "pretrain", c.pretrain.lr);
    read_field(p, "momentum", "pretrain", c.pretrain.momentum);
    read_field(p, "mask_rate", "pretrain", c.pretrain.mask_rate);
    read_field(p, "checkpoint", "pretrain", c.pretrain.checkpoint);
  }
  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    detail::reject_unknown(s, "seeds", {"data", "init", "mask"});
    read_field(s, "data", "seeds", c.seeds.data);
    read_field(s, "init", "seeds", c.seeds.init);
    read_field(s, "mask", "seeds", c.seeds.mask);
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path + ": cannot open config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace gradmask
