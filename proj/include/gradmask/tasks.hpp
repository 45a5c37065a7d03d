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

// Deterministic synthetic data: a first-order Markov "language" for masked
// token pretraining and small classification tasks for fine-tuning.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gradmask/errors.hpp"
#include "gradmask/rng.hpp"

namespace gradmask {

using Sequence = std::vector<std::size_t>;

enum class Split { kTrain, kTest, kUnlabeled };

enum class TaskKind { kMajorityToken, kFirstLastMatch, kWindowedParity };

inline std::string_view task_name(TaskKind k) {
  switch (k) {
    case TaskKind::kMajorityToken: return "majority-token";
    case TaskKind::kFirstLastMatch: return "first-last-match";
    case TaskKind::kWindowedParity: return "windowed-parity";
  }
  return "?";
}

inline std::optional<TaskKind> parse_task(std::string_view name) {
  for (TaskKind k : {TaskKind::kMajorityToken, TaskKind::kFirstLastMatch, TaskKind::kWindowedParity}) {
    if (task_name(k) == name) return k;
  }
  return std::nullopt;
}

struct Dataset {
  std::vector<Sequence> sequences;
  std::vector<std::size_t> labels;  // empty for unlabeled corpora
  Split split = Split::kUnlabeled;
  std::uint64_t seed = 0;
  std::size_t vocab = 0;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return sequences.size(); }
  bool labeled() const noexcept { return !labels.empty(); }
};

// ---------------------------------------------------------------- language

/// Row-stochastic transition matrix (vocab x vocab, row-major) of the seeded
/// Markov chain. Weights are u^4 for uniform u, which concentrates each row
/// on a handful of successors.
inline std::vector<double> markov_transitions(std::size_t vocab, std::uint64_t seed) {
  std::vector<double> m(vocab * vocab);
  CounterRng rng(stream_key(seed, "markov/transitions"));
  for (std::size_t i = 0; i < vocab; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double u = rng.uniform();
      total += (m[i * vocab + j] = u * u * u * u + 1e-3);
    }
    for (std::size_t j = 0; j < vocab; ++j) m[i * vocab + j] /= total;
  }
  return m;
}

inline std::size_t sample_categorical(CounterRng& rng, const double* probs, std::size_t n) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    acc += probs[j];
    if (u < acc) return j;
  }
  return n - 1;
}

/// Unlabeled corpus of `count` sequences of length `n`; the first token is
/// uniform, the rest follow markov_transitions(vocab, seed).
inline Dataset gen_synthetic_language(std::size_t vocab, std::size_t n, std::size_t count, std::uint64_t seed) {
  if (vocab < 8) throw ConfigError("synthetic language needs vocab >= 8, got " + std::to_string(vocab));
  if (n < 1) throw ConfigError("sequence length must be positive");
  const auto trans = markov_transitions(vocab, seed);
  Dataset ds;
  ds.vocab = vocab;
  ds.seed = seed;
  ds.split = Split::kUnlabeled;
  ds.sequences.reserve(count);
  CounterRng rng(stream_key(seed, "markov/corpus"));
  for (std::size_t s = 0; s < count; ++s) {
    Sequence seq(n);
    seq[0] = rng.below(vocab);
    for (std::size_t t = 1; t < n; ++t) seq[t] = sample_categorical(rng, &trans[seq[t - 1] * vocab], vocab);
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

// ---------------------------------------------------------------- tasks

inline constexpr std::size_t kMajorityA = 0;
inline constexpr std::size_t kMajorityB = 1;
inline constexpr std::size_t kParityMarker = 0;
inline constexpr std::size_t kParityWindow = 4;

inline std::size_t task_classes(TaskKind) { return 2; }

/// Label rule. Returns nullopt for sequences the task excludes (ties in
/// majority-token).
///   majority-token    0 if token 0 outnumbers token 1, 1 if the reverse
///   first-last-match  1 if first == last token, else 0
///   windowed-parity   parity of the count of token 0 in the first 4 positions
inline std::optional<std::size_t> task_label(TaskKind kind, const Sequence& seq) {
  switch (kind) {
    case TaskKind::kMajorityToken: {
      const auto a = std::count(seq.begin(), seq.end(), kMajorityA);
      const auto b = std::count(seq.begin(), seq.end(), kMajorityB);
      if (a == b) return std::nullopt;
      return a > b ? 0 : 1;
    }
    case TaskKind::kFirstLastMatch:
      return seq.front() == seq.back() ? 1 : 0;
    case TaskKind::kWindowedParity: {
      const auto end = seq.begin() + static_cast<std::ptrdiff_t>(std::min(kParityWindow, seq.size()));
      return static_cast<std::size_t>(std::count(seq.begin(), end, kParityMarker)) % 2;
    }
  }
  return std::nullopt;
}

inline Sequence draw_task_sequence(TaskKind kind, std::size_t vocab, std::size_t n, CounterRng& rng) {
  Sequence seq(n);
  for (auto& t : seq) {
    switch (kind) {
      case TaskKind::kMajorityToken: {
        const double u = rng.uniform();
        t = u < 0.25 ? kMajorityA : u < 0.5 ? kMajorityB : 2 + rng.below(vocab - 2);
        break;
      }
      case TaskKind::kFirstLastMatch:
        t = rng.below(vocab);
        break;
      case TaskKind::kWindowedParity:
        t = rng.uniform() < 0.3 ? kParityMarker : 1 + rng.below(vocab - 1);
        break;
    }
  }
  return seq;
}

namespace detail {

inline Dataset gen_task_split(TaskKind kind, std::size_t vocab, std::size_t n, std::size_t count,
                              std::uint64_t seed, std::string_view tag, const std::set<Sequence>* exclude,
                              Split split) {
  if (vocab < 4) throw ConfigError("classification tasks need vocab >= 4");
  if (n < 2) throw ConfigError("classification tasks need sequence length >= 2");
  Dataset ds;
  ds.vocab = vocab;
  ds.classes = task_classes(kind);
  ds.seed = seed;
  ds.split = split;
  CounterRng rng(stream_key(seed, std::string("task/") + std::string(task_name(kind)) + "/" + std::string(tag)));
  // Alternate the wanted label and reject until it appears: exact balance.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t want = i % ds.classes;
    for (;;) {
      Sequence seq = draw_task_sequence(kind, vocab, n, rng);
      const auto label = task_label(kind, seq);
      if (!label || *label != want) continue;
      if (exclude && exclude->contains(seq)) continue;
      ds.sequences.push_back(std::move(seq));
      ds.labels.push_back(*label);
      break;
    }
  }
  return ds;
}

}  // namespace detail

inline Dataset gen_classification_task(TaskKind kind, std::size_t vocab, std::size_t n, std::size_t count,
                                       std::uint64_t seed) {
  return detail::gen_task_split(kind, vocab, n, count, seed, "train", nullptr, Split::kTrain);
}

/// Train and test sets from one seed; no test sequence occurs in train.
inline std::pair<Dataset, Dataset> gen_task_splits(TaskKind kind, std::size_t vocab, std::size_t n,
                                                   std::size_t train_count, std::size_t test_count,
                                                   std::uint64_t seed) {
  Dataset train = detail::gen_task_split(kind, vocab, n, train_count, seed, "train", nullptr, Split::kTrain);
  const std::set<Sequence> seen(train.sequences.begin(), train.sequences.end());
  Dataset test = detail::gen_task_split(kind, vocab, n, test_count, seed, "test", &seen, Split::kTest);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------- JSONL

inline constexpr int kDatasetSchema = 1;

/// One line per sequence: {"schema":1,"tokens":[...],"label":k}; "label" is
/// omitted for unlabeled corpora.
inline void export_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(path + ": cannot open for writing");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    nlohmann::json line;
    line["schema"] = kDatasetSchema;
    line["tokens"] = ds.sequences[i];
    if (ds.labeled()) line["label"] = ds.labels[i];
    os << line.dump() << '\n';
  }
  if (!os) throw IoError(path + ": write failed");
}

inline Dataset import_dataset(const std::string& path, std::size_t vocab, std::size_t classes) {
  std::ifstream is(path);
  if (!is) throw IoError(path + ": cannot open dataset");
  Dataset ds;
  ds.vocab = vocab;
  ds.classes = classes;
  std::string text;
  std::size_t lineno = 0;
  while (std::getline(is, text)) {
    ++lineno;
    if (text.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json line;
    try {
      line = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(where + ": " + e.what());
    }
    if (line.value("schema", 0) != kDatasetSchema) throw InputError(where + ": unsupported schema");
    Sequence seq = line.at("tokens").get<Sequence>();
    for (std::size_t t : seq) {
      if (t >= vocab) throw InputError(where + ": token " + std::to_string(t) + " out of range");
    }
    if (line.contains("label")) {
      const auto label = line["label"].get<std::size_t>();
      if (label >= classes) throw InputError(where + ": label out of range");
      ds.labels.push_back(label);
    }
    ds.sequences.push_back(std::move(seq));
  }
  if (!ds.labels.empty() && ds.labels.size() != ds.sequences.size()) {
    throw InputError(path + ": some lines lack a label");
  }
  return ds;
}

}  // namespace gradmask
