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

#include <vector>

#include <gtest/gtest.h>

#include "gradmask/optim.hpp"
#include "test_util.hpp"

namespace gradmask {
namespace {

using testing::layered_params;

void fill_grads(ParamSet& ps, std::uint64_t seed) {
  CounterRng rng(stream_key(seed, "optim-grads"));
  for (auto& p : ps)
    for (double& g : p.tensor.grad()) g = rng.uniform(-1.0, 1.0);
}

TEST(MaskedSgd, PlainStepIsThetaMinusRateTimesGradient) {
  ParamSet ps = layered_params(2);
  fill_grads(ps, 1);
  std::vector<std::vector<double>> want;
  for (auto& p : ps) {
    std::vector<double> w(p.tensor.size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = p.tensor[j] - 0.1 * p.tensor.grad()[j];
    want.push_back(w);
  }
  MaskedSgd opt({.lr = 0.1, .momentum = 0.0, .weight_decay = 0.0});
  opt.step(ps, GradMask::all_active(ps));
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps[i].tensor.values(), want[i]);
}

TEST(MaskedSgd, ZeroRateLeavesParametersUnchanged) {
  ParamSet ps = layered_params(2);
  std::vector<Tensor> before;
  for (const auto& p : ps) before.push_back(Tensor(p.tensor.shape(), p.tensor.values()));
  MaskedSgd opt({.lr = 0.0, .momentum = 0.9, .weight_decay = 0.0});
  for (int s = 0; s < 3; ++s) {
    fill_grads(ps, s);
    opt.step(ps, GradMask::all_active(ps));
  }
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps[i].tensor.values(), before[i].values());
}

// theta, v and g of one scalar entry, updated by hand.
TEST(MaskedSgd, ScalarMatchesHandRolledLoopOverTenSteps) {
  ParamSet ps;
  ps.add("layer1.x", 1, Tensor({1}, 0.75), true);
  const double lr = 0.05, mu = 0.9, wd = 1e-2, scale = 1.25;
  MaskedSgd opt({.lr = lr, .momentum = mu, .weight_decay = wd});
  const std::vector<int> on{1, 0, 1, 1, 0, 0, 1, 0, 1, 1};
  double theta = 0.75, v = 0.0;
  for (int s = 0; s < 10; ++s) {
    const double g = 0.3 * theta - 0.1 * s;
    ps[0].tensor.grad()[0] = g;
    GradMask m = GradMask::all_active(ps);
    m.scale = scale;
    m.support[0] = ParamSupport::entries({static_cast<std::uint8_t>(on[s])});
    opt.step(ps, m);

    const double ghat = on[s] ? g * scale : 0.0;
    v = mu * v + ghat;
    if (on[s]) theta = theta - lr * v - lr * wd * theta;
    EXPECT_DOUBLE_EQ(ps[0].tensor[0], theta) << "step " << s;
  }
}

TEST(MaskedSgd, MaskedEntriesStayBitIdenticalUnderMomentumAndDecay) {
  ParamSet ps = layered_params(3);
  std::vector<std::vector<double>> before;
  for (const auto& p : ps) before.push_back(p.tensor.values());
  MaskedSgd opt({.lr = 0.1, .momentum = 0.9, .weight_decay = 1e-2});
  GradMask m = GradMask::all_active(ps);
  std::vector<std::uint8_t> bits(ps[ps.index_of("layer2.weight")].tensor.size(), 0);
  for (std::size_t j = 0; j < bits.size(); j += 2) bits[j] = 1;
  m.support[ps.index_of("layer2.weight")] = ParamSupport::entries(bits);
  m.support[ps.index_of("layer3.bias")] = ParamSupport::none();
  for (int s = 0; s < 20; ++s) {
    fill_grads(ps, s + 100);
    opt.step(ps, m);
  }
  const auto& w = ps[ps.index_of("layer2.weight")];
  const auto& w0 = before[ps.index_of("layer2.weight")];
  for (std::size_t j = 0; j < bits.size(); ++j) {
    if (bits[j]) {
      EXPECT_NE(w.tensor[j], w0[j]);
    } else {
      EXPECT_EQ(w.tensor[j], w0[j]);
    }
  }
  EXPECT_EQ(ps[ps.index_of("layer3.bias")].tensor.values(), before[ps.index_of("layer3.bias")]);
}

TEST(MaskedSgd, AllActiveMaskMatchesUnmaskedPath) {
  ParamSet a = layered_params(2), b = layered_params(2);
  MaskedSgd oa({.lr = 0.05, .momentum = 0.9, .weight_decay = 1e-4}), ob(oa.config());
  for (int s = 0; s < 25; ++s) {
    fill_grads(a, s);
    fill_grads(b, s);
    oa.step(a, GradMask::all_active(a));
    ob.step_unmasked(b);
  }
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tensor.values(), b[i].tensor.values());
}

TEST(MaskedSgd, StepZeroesGradients) {
  ParamSet ps = layered_params(1);
  fill_grads(ps, 2);
  MaskedSgd opt({});
  opt.step(ps, GradMask::all_active(ps));
  for (const auto& p : ps)
    for (double g : p.tensor.grad()) EXPECT_EQ(g, 0.0);
}

TEST(MaskedSgd, MissingGradientIsContractError) {
  ParamSet ps = layered_params(1);
  ps[0].tensor.clear_grad();
  MaskedSgd opt({});
  EXPECT_THROW(opt.step(ps, GradMask::all_active(ps)), ContractError);
  EXPECT_THROW(opt.step_unmasked(ps), ContractError);
}

TEST(MaskedSgd, DeterministicGivenState) {
  auto run = [] {
    ParamSet ps = layered_params(2);
    MaskedSgd opt({.lr = 0.05, .momentum = 0.9, .weight_decay = 1e-3});
    GradMask m = GradMask::all_active(ps);
    m.support[1] = ParamSupport::none();
    for (int s = 0; s < 5; ++s) {
      fill_grads(ps, s);
      opt.step(ps, m);
    }
    std::vector<double> out;
    for (const auto& p : ps) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(OptimConfigCheck, RejectsInvalidValues) {
  EXPECT_THROW((OptimConfig{.lr = 0.0}).validate(), ConfigError);
  EXPECT_THROW((OptimConfig{.lr = 0.1, .momentum = 1.0}).validate(), ConfigError);
  EXPECT_THROW((OptimConfig{.lr = 0.1, .momentum = 0.0, .weight_decay = -1.0}).validate(), ConfigError);
  EXPECT_NO_THROW(OptimConfig{}.validate());
}

TEST(ZeroGrads, ClearsAndIsIdempotent) {
  ParamSet ps = layered_params(2);
  fill_grads(ps, 3);
  zero_grads(ps);
  for (const auto& p : ps)
    for (double g : p.tensor.grad()) EXPECT_EQ(g, 0.0);
  zero_grads(ps);
  for (const auto& p : ps)
    for (double g : p.tensor.grad()) EXPECT_EQ(g, 0.0);
}

TEST(ZeroGrads, BackwardAfterZeroMatchesSingleBackward) {
  Tensor x = testing::random_tensor({3, 3}, 5);
  auto backward = [&] {
    Tape tape;
    const Var v = tape.parameter(x);
    tape.backward(sum(mul(v, v)));
  };
  backward();
  const std::vector<double> once(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), once);
}

}  // namespace
}  // namespace gradmask
