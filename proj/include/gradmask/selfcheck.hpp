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

// Self-test suite behind `gradmask check`: fast property checks of the
// gradient engine, the mask policies, the optimizer hook and the t-test.
// Each check returns a CheckResult instead of throwing so that a report
// covers every property even when one fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "gradmask/harness.hpp"
#include "gradmask/stats.hpp"

namespace gradmask {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

inline CheckResult timed(std::string name, const std::function<CheckResult()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = std::move(name);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Small but complete config used by the optimizer-path checks.
inline RunConfig small_run_config() {
  RunConfig cfg;
  cfg.model.d_model = cfg.model.out_dim = 16;
  cfg.model.key_dim = 8;
  cfg.model.heads = 2;
  cfg.model.head_dim = 8;
  cfg.model.layers = 4;
  cfg.model.vocab = 16;
  cfg.model.max_len = 8;
  cfg.train.batch_size = 8;
  cfg.train.train_size = 400;
  cfg.train.test_size = 50;
  cfg.output_dir = "unused";
  return cfg;
}

}  // namespace detail

/// Analytic vs central-difference gradients of cross-entropy for every
/// parameter of a d=8, l=4, two-head, two-layer model on length-5 inputs.
inline CheckResult check_gradients(std::size_t seeds = 5, double tolerance = 1e-4, double step = 1e-5) {
  return detail::timed("gradient correctness", [&] {
    ModelConfig mc;
    mc.d_model = mc.out_dim = 8;
    mc.key_dim = 4;
    mc.heads = 2;
    mc.head_dim = 4;
    mc.layers = 2;
    mc.vocab = 10;
    mc.max_len = 5;
    mc.classes = 3;
    double worst = 0.0;
    std::string worst_name;
    for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
      Transformer model(mc, seed);
      CounterRng rng(stream_key(seed, "check/gradients"));
      std::vector<std::size_t> tokens(5);
      for (auto& t : tokens) t = rng.below(mc.vocab);
      const std::vector<std::size_t> label{rng.below(mc.classes)};
      auto loss = [&](bool grad) {
        Tape tape;
        const auto vars = model.bind(tape);
        const Var l = cross_entropy(model.classify(vars, tokens), label);
        if (grad) tape.backward(l);
        return l.value()[0];
      };
      model.params().zero_grads();
      loss(true);
      for (auto& p : model.params()) {
        double diff = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < p.tensor.size(); ++i) {
          const double x = p.tensor[i];
          p.tensor[i] = x + step;
          const double up = loss(false);
          p.tensor[i] = x - step;
          const double down = loss(false);
          p.tensor[i] = x;
          const double numeric = (up - down) / (2.0 * step);
          const double analytic = p.tensor.grad()[i];
          diff += (numeric - analytic) * (numeric - analytic);
          na += analytic * analytic;
          nb += numeric * numeric;
        }
        const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
        if (rel > worst) {
          worst = rel;
          worst_name = p.name;
        }
      }
    }
    CheckResult r;
    r.passed = worst <= tolerance;
    r.detail = detail::fmt("%.0f seeds, worst relative error %.3g", static_cast<double>(seeds), worst) + " (" +
               worst_name + ")";
    return r;
  });
}

/// Zero fraction and mean mask value over the first 10^6 entries drawn by
/// GradDrop at rate p over the default model's maskable parameters.
inline CheckResult check_mask_statistics(double p = 0.2, std::size_t entries = 1000000) {
  return detail::timed("mask statistics", [&] {
    Transformer model(ModelConfig{}, 1);
    const ParamSet& ps = model.params();
    MaskPolicy pol{PolicyKind::kGradDrop, p, 1};
    MaskState state(7);
    advance_epoch(state, pol, ps);
    std::size_t seen = 0, kept = 0;
    double value_sum = 0.0;
    while (seen < entries) {
      const GradMask m = sample_batch_mask(state, pol, ps);
      for (std::size_t i = 0; i < ps.size() && seen < entries; ++i) {
        if (!ps[i].maskable) continue;
        for (std::size_t j = 0; j < ps[i].tensor.size() && seen < entries; ++j, ++seen) {
          if (m.support[i].active(j)) {
            ++kept;
            value_sum += m.scale;
          }
        }
      }
    }
    const double zero_frac = 1.0 - static_cast<double>(kept) / static_cast<double>(seen);
    const double mean_value = value_sum / static_cast<double>(seen);
    const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(seen));
    CheckResult r;
    r.passed = std::abs(zero_frac - p) <= 3.0 * sigma && std::abs(mean_value - 1.0) <= 0.005;
    r.detail = detail::fmt("zero fraction %.5f (bounds +-%.5f), mean mask value %.5f", zero_frac, 3.0 * sigma,
                           mean_value);
    return r;
  });
}

/// Fifty optimizer steps (momentum 0.9, weight decay 1e-4) under every
/// policy; entries whose support was false on every step must keep their
/// initial bits.
inline CheckResult check_masked_noop(std::size_t steps = 50) {
  return detail::timed("masked no-op", [&] {
    std::string detail_text;
    bool ok = true;
    for (PolicyKind kind : kAllPolicies) {
      RunConfig cfg = detail::small_run_config();
      cfg.policy.kind = kind;
      cfg.policy.p = 0.9;
      cfg.optim = {0.05, 0.9, 1e-4};
      const Transformer initial(cfg.model, cfg.seeds.init);
      std::vector<std::vector<std::uint8_t>> ever(initial.params().size());
      for (std::size_t i = 0; i < ever.size(); ++i) ever[i].assign(initial.params()[i].tensor.size(), 0);
      std::vector<std::vector<double>> final_values;
      std::size_t taken = 0;
      RunOptions opts;
      opts.write_files = false;
      opts.max_steps = steps;
      opts.on_step = [&](std::size_t, std::size_t, const GradMask* m, const Transformer& model, double) {
        ++taken;
        for (std::size_t i = 0; i < ever.size(); ++i)
          for (std::size_t j = 0; j < ever[i].size(); ++j) ever[i][j] |= m ? m->support[i].active(j) : 1;
        if (taken == steps) {
          final_values.clear();
          for (const auto& p : model.params()) final_values.push_back(p.tensor.values());
        }
      };
      run_experiment(cfg, opts);
      std::size_t frozen = 0, moved = 0;
      for (std::size_t i = 0; i < ever.size(); ++i) {
        for (std::size_t j = 0; j < ever[i].size(); ++j) {
          if (ever[i][j]) continue;
          ++frozen;
          const double before = initial.params()[i].tensor[j];
          if (std::memcmp(&before, &final_values[i][j], sizeof(double)) != 0) ++moved;
        }
      }
      ok = ok && taken == steps && moved == 0;
      detail_text += std::string(policy_name(kind)) + ":" + std::to_string(frozen) + " frozen/" +
                     std::to_string(moved) + " moved ";
    }
    return CheckResult{"", ok, detail_text};
  });
}

/// GradDrop at p = 0 against the maskless optimizer path: 100 steps of
/// training loss must agree bit for bit.
inline CheckResult check_sft_equivalence(std::size_t steps = 100) {
  return detail::timed("SFT equivalence", [&] {
    auto trajectory = [&](bool masking) {
      RunConfig cfg = detail::small_run_config();
      cfg.policy.kind = PolicyKind::kGradDrop;
      cfg.policy.p = 0.0;
      cfg.train.masking = masking;
      cfg.train.epochs = 3;
      std::vector<double> losses;
      std::vector<double> params;
      RunOptions opts;
      opts.write_files = false;
      opts.max_steps = steps;
      opts.on_step = [&](std::size_t, std::size_t, const GradMask*, const Transformer& model, double loss) {
        losses.push_back(loss);
        if (losses.size() == steps) {
          for (const auto& p : model.params()) params.insert(params.end(), p.tensor.data().begin(), p.tensor.data().end());
        }
      };
      run_experiment(cfg, opts);
      return std::make_pair(losses, params);
    };
    const auto masked = trajectory(true), plain = trajectory(false);
    const bool same_losses = masked.first.size() == steps && plain.first.size() == steps &&
                             std::memcmp(masked.first.data(), plain.first.data(), steps * sizeof(double)) == 0;
    const bool same_params = masked.second.size() == plain.second.size() &&
                             std::memcmp(masked.second.data(), plain.second.data(), masked.second.size() * sizeof(double)) == 0;
    return CheckResult{"", same_losses && same_params,
                       std::to_string(masked.first.size()) + " steps, losses " +
                           (same_losses ? "bit-identical" : "differ") + ", parameters " +
                           (same_params ? "bit-identical" : "differ")};
  });
}

/// GradDropEpoch growth, EpochToggle partition and the 24-layer freeze.
inline CheckResult check_schedules() {
  return detail::timed("schedule exactness", [&] {
    std::string why;
    Transformer model(ModelConfig{}, 3);
    const ParamSet& ps = model.params();

    MaskState cum(11);
    const MaskPolicy epoch_pol{PolicyKind::kGradDropEpoch, 0.2, 5};
    std::vector<std::vector<std::uint8_t>> prev;
    for (std::size_t e = 1; e <= 5; ++e) {
      const GradMask m = *advance_epoch(cum, epoch_pol, ps);
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::size_t n = ps[i].tensor.size(), active = m.support[i].count(n);
        const double target = ps[i].maskable ? static_cast<double>(n * e) / 5.0 : static_cast<double>(n);
        if (std::abs(static_cast<double>(active) - target) > 1.0) why += ps[i].name + " off quota; ";
        if (!prev.empty()) {
          for (std::size_t j = 0; j < n; ++j) {
            if (prev[i][j] && !m.support[i].active(j)) why += ps[i].name + " shrank; ";
          }
        }
      }
      prev.assign(ps.size(), {});
      for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t j = 0; j < ps[i].tensor.size(); ++j) prev[i].push_back(m.support[i].active(j));
    }

    MaskState tog(13);
    const MaskPolicy toggle_pol{PolicyKind::kEpochToggle, 0.2, 5};
    std::vector<std::vector<int>> hits(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) hits[i].assign(ps[i].tensor.size(), 0);
    for (std::size_t e = 1; e <= 5; ++e) {
      const GradMask m = *advance_epoch(tog, toggle_pol, ps);
      for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t j = 0; j < hits[i].size(); ++j) hits[i][j] += m.support[i].active(j);
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (int h : hits[i]) {
        if (ps[i].maskable && h != 1) {
          why += ps[i].name + " toggle not a partition; ";
          break;
        }
      }
    }

    ModelConfig deep;
    deep.d_model = deep.out_dim = 8;
    deep.key_dim = 4;
    deep.head_dim = 4;
    deep.layers = 24;
    Transformer big(deep, 5);
    MaskState frz(17);
    const MaskPolicy freeze_pol{PolicyKind::kFreezeTopDown, 0.2, 12, 2};
    GradMask m;
    for (std::size_t e = 1; e <= 3; ++e) m = *advance_epoch(frz, freeze_pol, big.params());
    std::set<std::size_t> active;
    for (std::size_t i = 0; i < big.params().size(); ++i) {
      const Param& p = big.params()[i];
      if (p.maskable && m.support[i].kind == ParamSupport::Kind::kAll) active.insert(p.layer);
    }
    const bool six_top = active == std::set<std::size_t>{19, 20, 21, 22, 23, 24};
    if (!six_top) why += "freeze-topdown has " + std::to_string(active.size()) + " active layers; ";
    return CheckResult{"", why.empty(), why.empty() ? "fifths, partition and 6 of 24 layers all exact" : why};
  });
}

/// p_e = max(0, 0.9 - e/T) as tracked by MaskState, for T = 1..20.
inline CheckResult check_anneal() {
  return detail::timed("anneal schedule", [&] {
    Transformer model(detail::small_run_config().model, 1);
    std::string why;
    for (std::size_t T = 1; T <= 20; ++T) {
      MaskState state(T);
      const MaskPolicy pol{PolicyKind::kAnnealGradDrop, 0.2, T};
      for (std::size_t e = 1; e <= T; ++e) {
        advance_epoch(state, pol, model.params());
        const double want = std::max(0.0, 0.9 - static_cast<double>(e) / static_cast<double>(T));
        const double got = state.p_effective(pol);
        const double scale = sample_batch_mask(state, pol, model.params()).scale;
        if (got != want || scale != 1.0 / (1.0 - want)) why += "T=" + std::to_string(T) + " e=" + std::to_string(e) + "; ";
      }
      if (state.p_effective(pol) != 0.0) why += "T=" + std::to_string(T) + " does not end at 0; ";
    }
    return CheckResult{"", why.empty(), why.empty() ? "exact for T = 1..20, p = 0 at e = T" : why};
  });
}

/// Paired t statistic against the sum-of-squares form of the textbook
/// formula on 10 random difference vectors.
inline CheckResult check_ttest(std::size_t vectors = 10) {
  return detail::timed("paired t-test", [&] {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < vectors; ++seed) {
      CounterRng rng(stream_key(seed, "check/ttest"));
      const std::size_t n = 3 + rng.below(30);
      std::vector<double> d(n);
      long double s = 0.0L, s2 = 0.0L;
      for (auto& x : d) {
        x = rng.uniform(-5.0, 5.0);
        s += x;
        s2 += static_cast<long double>(x) * x;
      }
      const long double m = s / n;
      const long double sd = std::sqrt((s2 - n * m * m) / (n - 1));
      const double ref = static_cast<double>(m / (sd / std::sqrt(static_cast<long double>(n))));
      worst = std::max(worst, std::abs(paired_t_test(d).t - ref));
    }
    return CheckResult{"", worst <= 1e-10, detail::fmt("worst |t - reference| = %.3g", worst)};
  });
}

inline std::vector<CheckResult> run_self_checks() {
  return {check_gradients(),       check_mask_statistics(), check_masked_noop(), check_sft_equivalence(),
          check_schedules(),       check_anneal(),          check_ttest()};
}

}  // namespace gradmask
