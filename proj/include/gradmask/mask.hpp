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

// Gradient masks and their schedules.
//
// A mask is a boolean support per parameter (true = gradient flows) plus one
// scale applied to surviving gradients of maskable parameters. Embedding and
// classifier-head parameters are never maskable and always pass through.
//
// Policies fall in three groups:
//   per-batch   GradDrop, LayerGradDrop, AnnealGradDrop, AnnealLayerGradDrop
//               (fresh Bernoulli(1 - p) draw every mini-batch)
//   per-epoch   GradDropEpoch, EpochToggle (entries unfrozen without
//               replacement, 1/T of each tensor per epoch)
//   freezing    FreezeTopDown, FreezeBottomUp, FreezeToggleTopDown
//               (whole encoder layers, k per epoch)
// SFT keeps everything active.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gradmask/errors.hpp"
#include "gradmask/rng.hpp"
#include "gradmask/transformer.hpp"

namespace gradmask {

enum class PolicyKind {
  kSft,
  kGradDrop,
  kLayerGradDrop,
  kGradDropEpoch,
  kEpochToggle,
  kAnnealGradDrop,
  kAnnealLayerGradDrop,
  kFreezeTopDown,
  kFreezeBottomUp,
  kFreezeToggleTopDown,
};

inline constexpr PolicyKind kAllPolicies[] = {
    PolicyKind::kSft,           PolicyKind::kGradDrop,          PolicyKind::kLayerGradDrop,
    PolicyKind::kGradDropEpoch, PolicyKind::kEpochToggle,       PolicyKind::kAnnealGradDrop,
    PolicyKind::kAnnealLayerGradDrop, PolicyKind::kFreezeTopDown, PolicyKind::kFreezeBottomUp,
    PolicyKind::kFreezeToggleTopDown,
};

inline std::string_view policy_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kSft: return "sft";
    case PolicyKind::kGradDrop: return "graddrop";
    case PolicyKind::kLayerGradDrop: return "layer-graddrop";
    case PolicyKind::kGradDropEpoch: return "graddrop-epoch";
    case PolicyKind::kEpochToggle: return "epoch-toggle";
    case PolicyKind::kAnnealGradDrop: return "anneal-graddrop";
    case PolicyKind::kAnnealLayerGradDrop: return "anneal-layer-graddrop";
    case PolicyKind::kFreezeTopDown: return "freeze-topdown";
    case PolicyKind::kFreezeBottomUp: return "freeze-bottomup";
    case PolicyKind::kFreezeToggleTopDown: return "freeze-toggle-topdown";
  }
  return "?";
}

inline std::optional<PolicyKind> parse_policy(std::string_view name) {
  for (PolicyKind k : kAllPolicies) {
    if (policy_name(k) == name) return k;
  }
  return std::nullopt;
}

constexpr bool is_per_batch(PolicyKind k) {
  return k == PolicyKind::kGradDrop || k == PolicyKind::kLayerGradDrop || k == PolicyKind::kAnnealGradDrop ||
         k == PolicyKind::kAnnealLayerGradDrop;
}
constexpr bool is_layerwise(PolicyKind k) {
  return k == PolicyKind::kLayerGradDrop || k == PolicyKind::kAnnealLayerGradDrop;
}
constexpr bool is_annealed(PolicyKind k) {
  return k == PolicyKind::kAnnealGradDrop || k == PolicyKind::kAnnealLayerGradDrop;
}
constexpr bool is_epoch_sampled(PolicyKind k) {
  return k == PolicyKind::kGradDropEpoch || k == PolicyKind::kEpochToggle;
}
constexpr bool is_freeze(PolicyKind k) {
  return k == PolicyKind::kFreezeTopDown || k == PolicyKind::kFreezeBottomUp ||
         k == PolicyKind::kFreezeToggleTopDown;
}

inline constexpr double kAnnealStart = 0.9;

/// Linearly annealed dropout rate max(0, 0.9 - epoch / T).
inline double anneal_rate(std::size_t epoch, std::size_t total_epochs) {
  const double p = kAnnealStart - static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return p > 0.0 ? p : 0.0;
}

struct MaskPolicy {
  PolicyKind kind = PolicyKind::kSft;
  double p = 0.2;                    // dropout probability (GradDrop, LayerGradDrop)
  std::size_t epochs = 1;            // T
  std::size_t layers_per_epoch = 0;  // k for freeze policies; 0 = ceil(L / T)
  bool scale_grads = true;           // multiply survivors by 1 / (1 - p)

  void validate() const {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("policy.p must lie in [0, 1), got " + std::to_string(p));
    if (epochs < 1) throw ConfigError("policy epochs T must be at least 1");
  }

  std::size_t freeze_step(std::size_t encoder_layers) const {
    if (layers_per_epoch) return layers_per_epoch;
    return std::max<std::size_t>(1, (encoder_layers + epochs - 1) / epochs);
  }
};

/// Support of one parameter's gradient.
struct ParamSupport {
  enum class Kind : std::uint8_t { kAll, kNone, kEntries };
  Kind kind = Kind::kAll;
  std::vector<std::uint8_t> bits;  // used only for kEntries

  static ParamSupport all() { return {}; }
  static ParamSupport none() { return {Kind::kNone, {}}; }
  static ParamSupport entries(std::vector<std::uint8_t> b) { return {Kind::kEntries, std::move(b)}; }

  bool active(std::size_t i) const {
    switch (kind) {
      case Kind::kAll: return true;
      case Kind::kNone: return false;
      case Kind::kEntries: return bits[i] != 0;
    }
    return false;
  }

  std::size_t count(std::size_t size) const {
    switch (kind) {
      case Kind::kAll: return size;
      case Kind::kNone: return 0;
      case Kind::kEntries: return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
    }
    return 0;
  }
};

struct GradMask {
  std::vector<ParamSupport> support;  // parallel to the ParamSet
  double scale = 1.0;                 // applied to surviving maskable entries

  static GradMask all_active(const ParamSet& params) {
    GradMask m;
    m.support.assign(params.size(), ParamSupport::all());
    return m;
  }

  /// Validate against `params`; throws ContractError on mismatch.
  void check(const ParamSet& params) const {
    if (support.size() != params.size()) {
      throw ContractError("mask covers " + std::to_string(support.size()) + " parameters, set has " +
                          std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < support.size(); ++i) {
      if (support[i].kind == ParamSupport::Kind::kEntries && support[i].bits.size() != params[i].tensor.size()) {
        throw ContractError("mask for '" + params[i].name + "' has " + std::to_string(support[i].bits.size()) +
                            " entries, parameter has " + std::to_string(params[i].tensor.size()));
      }
      if (!params[i].maskable && support[i].kind != ParamSupport::Kind::kAll) {
        throw ContractError("mask restricts non-maskable parameter '" + params[i].name + "'");
      }
    }
    if (!(scale > 0.0)) throw ContractError("mask scale must be positive");
  }
};

/// Highest encoder-layer index among maskable parameters (L).
inline std::size_t encoder_layer_count(const ParamSet& params) {
  std::size_t top = 0;
  for (const Param& p : params) {
    if (p.maskable) top = std::max(top, p.layer);
  }
  return top;
}

/// Per-run mask bookkeeping. Every random draw is keyed by
/// (seed, parameter or layer name, epoch, batch).
class MaskState {
 public:
  explicit MaskState(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

  /// Dropout rate in force for survivors' scaling: p for GradDrop and
  /// LayerGradDrop, the annealed rate for anneal kinds, 0 otherwise.
  double p_effective(const MaskPolicy& policy) const {
    if (is_annealed(policy.kind)) return anneal_rate(epoch_, policy.epochs);
    if (policy.kind == PolicyKind::kGradDrop || policy.kind == PolicyKind::kLayerGradDrop) return policy.p;
    return 0.0;
  }

  /// Union of every entry unfrozen so far by an epoch-wise or freeze policy.
  const std::optional<GradMask>& cumulative() const noexcept { return cumulative_; }

 private:
  friend GradMask sample_batch_mask(MaskState&, const MaskPolicy&, const ParamSet&);
  friend std::optional<GradMask> advance_epoch(MaskState&, const MaskPolicy&, const ParamSet&);

  const std::vector<std::uint32_t>& permutation(const Param& p) {
    auto it = perms_.find(p.name);
    if (it != perms_.end()) return it->second;
    std::vector<std::uint32_t> perm(p.tensor.size());
    std::iota(perm.begin(), perm.end(), 0u);
    CounterRng rng(stream_key(seed_, "perm/" + p.name));
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    return perms_.emplace(p.name, std::move(perm)).first->second;
  }

  void merge_cumulative(const GradMask& m, const ParamSet& params) {
    if (!cumulative_) {
      cumulative_ = m;
      return;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      ParamSupport& acc = cumulative_->support[i];
      const ParamSupport& add = m.support[i];
      if (acc.kind == ParamSupport::Kind::kAll || add.kind == ParamSupport::Kind::kNone) continue;
      if (add.kind == ParamSupport::Kind::kAll) {
        acc = ParamSupport::all();
        continue;
      }
      if (acc.kind == ParamSupport::Kind::kNone) {
        acc = add;
        continue;
      }
      for (std::size_t j = 0; j < acc.bits.size(); ++j) acc.bits[j] |= add.bits[j];
    }
  }

  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t batch_ = 0;
  std::map<std::string, std::vector<std::uint32_t>> perms_;
  std::optional<GradMask> cumulative_;
};

/// Fresh per-mini-batch mask for the per-batch policy kinds.
inline GradMask sample_batch_mask(MaskState& state, const MaskPolicy& policy, const ParamSet& params) {
  if (!is_per_batch(policy.kind)) {
    throw ContractError("sample_batch_mask called for non-batch policy '" + std::string(policy_name(policy.kind)) + "'");
  }
  const double p = state.p_effective(policy);
  const double keep = 1.0 - p;
  const std::uint64_t sid =
      stream_id(static_cast<std::uint32_t>(state.epoch_), static_cast<std::uint32_t>(state.batch_));
  ++state.batch_;

  GradMask mask;
  mask.scale = policy.scale_grads ? 1.0 / keep : 1.0;
  mask.support.resize(params.size());

  if (is_layerwise(policy.kind)) {
    std::map<std::size_t, bool> layer_on;
    for (const Param& prm : params) {
      if (!prm.maskable || layer_on.contains(prm.layer)) continue;
      CounterRng rng(stream_key(state.seed_, "layer" + std::to_string(prm.layer)), sid);
      layer_on[prm.layer] = rng.bernoulli(keep);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].maskable && !layer_on[params[i].layer]) mask.support[i] = ParamSupport::none();
    }
    return mask;
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& prm = params[i];
    if (!prm.maskable) continue;
    CounterRng rng(stream_key(state.seed_, prm.name), sid);
    std::vector<std::uint8_t> bits(prm.tensor.size());
    for (auto& b : bits) b = rng.bernoulli(keep) ? 1 : 0;
    mask.support[i] = ParamSupport::entries(std::move(bits));
  }
  return mask;
}

/// Start the next epoch. Returns the mask to hold fixed for the whole epoch,
/// or nullopt for per-batch kinds (whose annealed rate, if any, is updated).
inline std::optional<GradMask> advance_epoch(MaskState& state, const MaskPolicy& policy, const ParamSet& params) {
  const std::size_t eps = state.epoch_ + 1;
  if (eps > policy.epochs) {
    throw ContractError("advance_epoch: epoch " + std::to_string(eps) + " exceeds T = " +
                        std::to_string(policy.epochs));
  }
  state.epoch_ = eps;
  state.batch_ = 0;

  if (is_per_batch(policy.kind)) return std::nullopt;

  GradMask mask = GradMask::all_active(params);
  const std::size_t T = policy.epochs;

  if (is_epoch_sampled(policy.kind)) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Param& prm = params[i];
      if (!prm.maskable) continue;
      const std::size_t n = prm.tensor.size();
      const std::size_t hi = n * eps / T;
      const std::size_t lo = policy.kind == PolicyKind::kEpochToggle ? n * (eps - 1) / T : 0;
      const auto& perm = state.permutation(prm);
      std::vector<std::uint8_t> bits(n, 0);
      for (std::size_t j = lo; j < hi; ++j) bits[perm[j]] = 1;
      mask.support[i] = ParamSupport::entries(std::move(bits));
    }
  } else if (is_freeze(policy.kind)) {
    const std::size_t L = encoder_layer_count(params);
    const std::size_t k = policy.freeze_step(L);
    std::size_t first = 1, last = L;  // active encoder layers [first, last]
    if (policy.kind == PolicyKind::kFreezeTopDown) {
      first = L - std::min(k * eps, L) + 1;
    } else if (policy.kind == PolicyKind::kFreezeBottomUp) {
      last = std::min(k * eps, L);
    } else {
      const std::size_t windows = (L + k - 1) / k;
      const std::size_t w = (eps - 1) % windows;
      last = L - k * w;
      first = last > k ? last - k + 1 : 1;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Param& prm = params[i];
      if (prm.maskable && (prm.layer < first || prm.layer > last)) mask.support[i] = ParamSupport::none();
    }
  }

  if (policy.kind != PolicyKind::kSft) state.merge_cumulative(mask, params);
  return mask;
}

/// Zero masked gradient entries and scale survivors of maskable parameters,
/// in place. Non-maskable parameters are untouched.
inline void apply_mask(ParamSet& params, const GradMask& mask) {
  mask.check(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& prm = params[i];
    if (!prm.maskable || !prm.tensor.has_grad()) continue;
    auto g = prm.tensor.grad();
    const ParamSupport& s = mask.support[i];
    switch (s.kind) {
      case ParamSupport::Kind::kAll:
        if (mask.scale != 1.0) {
          for (double& v : g) v *= mask.scale;
        }
        break;
      case ParamSupport::Kind::kNone:
        std::fill(g.begin(), g.end(), 0.0);
        break;
      case ParamSupport::Kind::kEntries:
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = s.bits[j] ? g[j] * mask.scale : 0.0;
        break;
    }
  }
}

/// Exact per-layer share of active entries, indexed by layer (0..L+1).
inline std::vector<double> active_fraction(const GradMask& mask, const ParamSet& params) {
  mask.check(params);
  std::vector<std::size_t> active(params.layer_count(), 0), total(params.layer_count(), 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].tensor.size();
    total[params[i].layer] += n;
    active[params[i].layer] += mask.support[i].count(n);
  }
  std::vector<double> out(total.size(), 1.0);
  for (std::size_t l = 0; l < out.size(); ++l) {
    if (total[l]) out[l] = static_cast<double>(active[l]) / static_cast<double>(total[l]);
  }
  return out;
}

}  // namespace gradmask
