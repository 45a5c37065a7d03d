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

// Test-only oracles: central finite differences and small helpers. Nothing
// here calls into the backward pass.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "gradmask/rng.hpp"
#include "gradmask/tensor.hpp"
#include "gradmask/transformer.hpp"

namespace gradmask::testing {

inline constexpr double kFdStep = 1e-5;

/// Central-difference gradient of `loss` with respect to every entry of `t`.
inline std::vector<double> numeric_gradient(Tensor& t, const std::function<double()>& loss, double h = kFdStep) {
  std::vector<double> g(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double x = t[i];
    t[i] = x + h;
    const double up = loss();
    t[i] = x - h;
    const double down = loss();
    t[i] = x;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), with a floor on the denominator so that
/// two all-zero gradients compare equal.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / den;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  CounterRng rng(stream_key(seed, "test/random_tensor"));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  t.set_requires_grad(true);
  return t;
}

/// Small layered ParamSet: a non-maskable embedding (layer 0), per encoder
/// layer a rows x cols weight and a cols bias, and a non-maskable head.
inline ParamSet layered_params(std::size_t layers, std::size_t rows = 5, std::size_t cols = 7, std::uint64_t seed = 1) {
  ParamSet ps;
  ps.add("embed", 0, random_tensor({4, cols}, seed), false);
  for (std::size_t l = 1; l <= layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    ps.add(pre + "weight", l, random_tensor({rows, cols}, seed + 2 * l), true);
    ps.add(pre + "bias", l, random_tensor({cols}, seed + 2 * l + 1), true);
  }
  ps.add("head", layers + 1, random_tensor({cols, 2}, seed + 999), false);
  return ps;
}

}  // namespace gradmask::testing
