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

// Prints which encoder layers let gradients through, epoch by epoch, for
// every mask policy. Cells show the active fraction of each layer as a
// shade: ' ' frozen, '#' fully active.
//
//   mask_timeline [layers] [epochs]

#include <cstdio>
#include <cstdlib>
#include <string>

#include "gradmask/mask.hpp"

int main(int argc, char** argv) {
  using namespace gradmask;
  ModelConfig cfg;
  cfg.layers = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 6;
  const std::size_t epochs = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 6;
  const Transformer model(cfg, 1);
  const char shades[] = " .:-=+*#";

  for (PolicyKind kind : kAllPolicies) {
    MaskPolicy policy{kind, 0.5, epochs};
    MaskState state(42);
    std::vector<std::string> rows(cfg.layers);
    for (std::size_t e = 1; e <= epochs; ++e) {
      auto mask = advance_epoch(state, policy, model.params());
      if (!mask) mask = sample_batch_mask(state, policy, model.params());
      const auto frac = active_fraction(*mask, model.params());
      for (std::size_t l = 1; l <= cfg.layers; ++l) rows[l - 1] += shades[static_cast<int>(frac[l] * 7.0 + 0.5)];
    }
    std::printf("%s\n", std::string(policy_name(kind)).c_str());
    for (std::size_t l = cfg.layers; l >= 1; --l) std::printf("  layer %2zu |%s|\n", l, rows[l - 1].c_str());
  }
  return 0;
}
