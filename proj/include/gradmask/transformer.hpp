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

// Multi-head transformer encoder classifier.
//
// Self-attention per head follows
//     Z = softmax((Q K / sqrt(d * l)) V^T Q^T) (Q U)
// with K, V in R^{d x l} and U in R^{d x d_a}. The score scale is sqrt(d * l)
// rather than the more common sqrt(l). Head outputs are concatenated,
// projected back to width d by a learned affine map, added to the block input,
// layer-normalized, and passed through a two-layer relu feedforward network.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "gradmask/autodiff.hpp"
#include "gradmask/errors.hpp"
#include "gradmask/rng.hpp"
#include "gradmask/tensor.hpp"

namespace gradmask {

struct ModelConfig {
  std::size_t d_model = 32;     // d
  std::size_t key_dim = 16;     // l
  std::size_t out_dim = 32;     // o; must equal d_model
  std::size_t heads = 2;        // n_a
  std::size_t head_dim = 16;    // d_a
  std::size_t layers = 4;       // L
  std::size_t vocab = 32;
  std::size_t max_len = 16;
  std::size_t classes = 2;
  std::size_t ff_width = 0;     // 0 selects 4 * head_dim * heads

  std::size_t feedforward_width() const { return ff_width ? ff_width : 4 * head_dim * heads; }

  void validate() const {
    const std::pair<const char*, std::size_t> fields[] = {
        {"d_model", d_model}, {"key_dim", key_dim}, {"out_dim", out_dim}, {"heads", heads},
        {"head_dim", head_dim}, {"layers", layers}, {"vocab", vocab}, {"max_len", max_len},
        {"classes", classes}};
    for (const auto& [name, v] : fields) {
      if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
    }
    if (out_dim != d_model) {
      throw ConfigError("model.out_dim (" + std::to_string(out_dim) + ") must equal model.d_model (" +
                        std::to_string(d_model) + ") for the residual connection");
    }
    if (d_model < 2) throw ConfigError("model.d_model must be at least 2 for layer normalization");
  }
};

struct Param {
  std::string name;
  std::size_t layer = 0;
  Tensor tensor;
  bool maskable = false;
};

/// Named trainable parameters partitioned into layers: 0 = embeddings,
/// 1..L = encoder layers, L + 1 = classifier head. Iteration order is
/// insertion order.
class ParamSet {
 public:
  std::size_t add(std::string name, std::size_t layer, Tensor tensor, bool maskable) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    index_.emplace(name, params_.size());
    params_.push_back(Param{std::move(name), layer, std::move(tensor), maskable});
    layer_count_ = std::max(layer_count_, layer + 1);
    return params_.size() - 1;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  /// Number of layer slots (max layer index + 1).
  std::size_t layer_count() const noexcept { return layer_count_; }

  std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) {
      if (p.tensor.has_grad()) p.tensor.zero_grad();
    }
  }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t layer_count_ = 0;
};

/// Fill `t` with uniform(-bound, bound) from a stream keyed by (seed, name).
inline void init_uniform(Tensor& t, double bound, std::uint64_t seed, const std::string& name) {
  CounterRng rng(stream_key(seed, "init/" + name));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------- attention

/// One attention head over the token matrix q (n x d).
inline Var self_attention_head(const Var& q, const Var& key, const Var& value, const Var& proj) {
  const std::size_t d = q.cols();
  if (key.rows() != d || value.rows() != d || proj.rows() != d || key.cols() != value.cols()) {
    throw DimensionError("self_attention_head: Q " + shape_string(q.shape()) + ", K " +
                         shape_string(key.shape()) + ", V " + shape_string(value.shape()) + ", U " +
                         shape_string(proj.shape()));
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(d * key.cols()));
  const Var qk = matmul(q, key);
  const Var qv = matmul(q, value);
  const Var scores = scale(matmul(qk, transpose(qv)), norm);
  return matmul(softmax_rows(scores), matmul(q, proj));
}

/// Per-block parameter handles bound onto a tape.
struct BlockVars {
  std::vector<Var> key, value, proj;  // one per head
  Var out_w, out_b;                   // (heads * head_dim) x d, 1 x d
  Var ln_gain, ln_bias;
  Var ff_w1, ff_b1, ff_w2, ff_b2;
};

inline Var encoder_block(const Var& q, const BlockVars& p) {
  const std::size_t heads = p.key.size();
  if (heads == 0 || p.value.size() != heads || p.proj.size() != heads) {
    throw ConfigError("encoder_block: head parameter lists must be non-empty and equally sized");
  }
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) outs.push_back(self_attention_head(q, p.key[h], p.value[h], p.proj[h]));
  const Var concat = heads == 1 ? outs[0] : concat_cols(outs);
  if (concat.cols() != p.out_w.rows() || p.out_w.cols() != q.cols()) {
    throw ConfigError("encoder_block: concat width " + std::to_string(concat.cols()) +
                      " does not match output projection " + shape_string(p.out_w.shape()));
  }
  const Var mixed = add_row(matmul(concat, p.out_w), p.out_b);
  const Var normed = layer_norm(add(mixed, q), p.ln_gain, p.ln_bias);
  const Var hidden = relu(add_row(matmul(normed, p.ff_w1), p.ff_b1));
  return add_row(matmul(hidden, p.ff_w2), p.ff_b2);
}

// ---------------------------------------------------------------- model

class Transformer {
 public:
  struct LayerIndex {
    std::vector<std::size_t> key, value, proj;
    std::size_t out_w, out_b, ln_gain, ln_bias, ff_w1, ff_b1, ff_w2, ff_b2;
  };

  Transformer(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model, ff = cfg_.feedforward_width();
    const std::size_t concat = cfg_.heads * cfg_.head_dim;

    auto weight = [&](const std::string& name, std::size_t layer, std::size_t rows, std::size_t cols,
                      double bound) {
      Tensor t({rows, cols});
      init_uniform(t, bound, init_seed, name);
      return params_.add(name, layer, std::move(t), layer >= 1 && layer <= cfg_.layers);
    };
    auto fill = [&](const std::string& name, std::size_t layer, std::size_t n, double v) {
      return params_.add(name, layer, Tensor({n}, v), layer >= 1 && layer <= cfg_.layers);
    };
    auto fan = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };

    tok_emb_ = weight("embed.token", 0, cfg_.vocab, d, 1.0);
    pos_emb_ = weight("embed.position", 0, cfg_.max_len, d, 1.0);
    for (std::size_t l = 1; l <= cfg_.layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      LayerIndex li;
      for (std::size_t h = 0; h < cfg_.heads; ++h) {
        const std::string hp = pre + "head" + std::to_string(h) + ".";
        li.key.push_back(weight(hp + "key", l, d, cfg_.key_dim, fan(d)));
        li.value.push_back(weight(hp + "value", l, d, cfg_.key_dim, fan(d)));
        li.proj.push_back(weight(hp + "proj", l, d, cfg_.head_dim, fan(d)));
      }
      li.out_w = weight(pre + "out.weight", l, concat, d, fan(concat));
      li.out_b = fill(pre + "out.bias", l, d, 0.0);
      li.ln_gain = fill(pre + "norm.gain", l, d, 1.0);
      li.ln_bias = fill(pre + "norm.bias", l, d, 0.0);
      li.ff_w1 = weight(pre + "ff1.weight", l, d, ff, fan(d));
      li.ff_b1 = fill(pre + "ff1.bias", l, ff, 0.0);
      li.ff_w2 = weight(pre + "ff2.weight", l, ff, d, fan(ff));
      li.ff_b2 = fill(pre + "ff2.bias", l, d, 0.0);
      layers_.push_back(std::move(li));
    }
    head_w_ = weight("head.weight", cfg_.layers + 1, d, cfg_.classes, fan(d));
    head_b_ = fill("head.bias", cfg_.layers + 1, cfg_.classes, 0.0);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  const LayerIndex& layer_index(std::size_t layer) const { return layers_.at(layer - 1); }

  /// Re-draw the classifier head from `seed`.
  void reset_head(std::uint64_t seed) {
    init_uniform(params_[head_w_].tensor, 1.0 / std::sqrt(static_cast<double>(cfg_.d_model)), seed,
                 params_[head_w_].name);
    auto& b = params_[head_b_].tensor;
    std::fill(b.data().begin(), b.data().end(), 0.0);
  }

  /// Register every parameter on `tape`; the result is indexed like params().
  std::vector<Var> bind(Tape& tape) {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (auto& p : params_) vars.push_back(tape.parameter(p.tensor));
    return vars;
  }

  BlockVars block_vars(const std::vector<Var>& vars, std::size_t layer) const {
    const LayerIndex& li = layer_index(layer);
    BlockVars b;
    for (std::size_t h = 0; h < li.key.size(); ++h) {
      b.key.push_back(vars[li.key[h]]);
      b.value.push_back(vars[li.value[h]]);
      b.proj.push_back(vars[li.proj[h]]);
    }
    b.out_w = vars[li.out_w];
    b.out_b = vars[li.out_b];
    b.ln_gain = vars[li.ln_gain];
    b.ln_bias = vars[li.ln_bias];
    b.ff_w1 = vars[li.ff_w1];
    b.ff_b1 = vars[li.ff_b1];
    b.ff_w2 = vars[li.ff_w2];
    b.ff_b2 = vars[li.ff_b2];
    return b;
  }

  /// Token + learned positional embeddings through all encoder blocks;
  /// returns the n x d hidden states.
  Var encode(const std::vector<Var>& vars, std::span<const std::size_t> tokens) const {
    if (tokens.empty() || tokens.size() > cfg_.max_len) {
      throw InputError("sequence length " + std::to_string(tokens.size()) + " outside [1, " +
                       std::to_string(cfg_.max_len) + "]");
    }
    for (std::size_t t : tokens) {
      if (t >= cfg_.vocab) {
        throw InputError("token id " + std::to_string(t) + " out of range for vocab " + std::to_string(cfg_.vocab));
      }
    }
    std::vector<std::size_t> positions(tokens.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    Var x = add(embedding_lookup(vars[tok_emb_], tokens), embedding_lookup(vars[pos_emb_], positions));
    for (std::size_t l = 1; l <= cfg_.layers; ++l) x = encoder_block(x, block_vars(vars, l));
    return x;
  }

  /// Mean-pooled hidden state through the affine head: 1 x classes logits.
  Var classify(const std::vector<Var>& vars, std::span<const std::size_t> tokens) const {
    return add_row(matmul(mean_rows(encode(vars, tokens)), vars[head_w_]), vars[head_b_]);
  }

  Tensor forward_classify(std::span<const std::size_t> tokens) {
    Tape tape;
    const auto vars = bind(tape);
    const Tensor& z = classify(vars, tokens).value();
    return Tensor({z.size()}, z.values());
  }

  std::size_t head_weight_index() const noexcept { return head_w_; }
  std::size_t head_bias_index() const noexcept { return head_b_; }

 private:
  ModelConfig cfg_;
  ParamSet params_;
  std::vector<LayerIndex> layers_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, head_w_ = 0, head_b_ = 0;
};

}  // namespace gradmask
