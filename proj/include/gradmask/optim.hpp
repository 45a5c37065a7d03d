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

#include <string>
#include <vector>

#include "gradmask/errors.hpp"
#include "gradmask/mask.hpp"
#include "gradmask/transformer.hpp"

namespace gradmask {

struct OptimConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("optim.lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optim.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be non-negative");
  }
};

inline void zero_grads(ParamSet& params) { params.zero_grads(); }

/// SGD with optional momentum and the gradient mask applied between backprop
/// and the update:
///     g^ = g (.) m,   v <- mu v + g^,   theta <- theta - lr v - lr wd theta
/// The parameter update is gated by the mask support, so an entry whose
/// support is false is never written, whatever momentum or decay say.
class MaskedSgd {
 public:
  explicit MaskedSgd(OptimConfig cfg) : cfg_(cfg) {}

  const OptimConfig& config() const noexcept { return cfg_; }

  void step(ParamSet& params, const GradMask& mask) {
    for (const Param& p : params) {
      if (!p.tensor.has_grad()) throw ContractError("step: parameter '" + p.name + "' has no gradient");
    }
    apply_mask(params, mask);
    ensure_buffers(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param& prm = params[i];
      const ParamSupport& s = mask.support[i];
      if (s.kind == ParamSupport::Kind::kNone) {
        // Frozen entries keep velocity decaying but never move.
        decay_velocity(i);
        continue;
      }
      auto theta = prm.tensor.data();
      auto g = prm.tensor.grad();
      std::vector<double>& v = velocity_[i];
      const bool gated = s.kind == ParamSupport::Kind::kEntries;
      for (std::size_t j = 0; j < theta.size(); ++j) {
        double dir = g[j];
        if (cfg_.momentum > 0.0) dir = (v[j] = cfg_.momentum * v[j] + g[j]);
        if (gated && !s.bits[j]) continue;
        theta[j] -= cfg_.lr * (dir + cfg_.weight_decay * theta[j]);
      }
    }
    params.zero_grads();
  }

  /// Plain SGD with no mask machinery at all; the reference path that SFT
  /// runs must reproduce bit for bit.
  void step_unmasked(ParamSet& params) {
    ensure_buffers(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param& prm = params[i];
      if (!prm.tensor.has_grad()) throw ContractError("step: parameter '" + prm.name + "' has no gradient");
      auto theta = prm.tensor.data();
      auto g = prm.tensor.grad();
      std::vector<double>& v = velocity_[i];
      for (std::size_t j = 0; j < theta.size(); ++j) {
        double dir = g[j];
        if (cfg_.momentum > 0.0) dir = (v[j] = cfg_.momentum * v[j] + g[j]);
        theta[j] -= cfg_.lr * (dir + cfg_.weight_decay * theta[j]);
      }
    }
    params.zero_grads();
  }

  const std::vector<double>& velocity(std::size_t param) const { return velocity_.at(param); }

 private:
  void ensure_buffers(const ParamSet& params) {
    if (velocity_.size() == params.size()) return;
    velocity_.clear();
    for (const Param& p : params) velocity_.emplace_back(p.tensor.size(), 0.0);
  }

  void decay_velocity(std::size_t i) {
    if (cfg_.momentum == 0.0) return;
    for (double& x : velocity_[i]) x *= cfg_.momentum;
  }

  OptimConfig cfg_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace gradmask
