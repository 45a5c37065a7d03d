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

#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "gradmask/errors.hpp"

namespace gradmask {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
inline double sample_stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

struct PairedTTest {
  std::size_t n = 0;
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  double t = 0.0;
  double p_value = 1.0;  // two-sided
  bool degenerate = false;  // sd of differences is zero
};

/// Paired two-sided t-test on differences d_i:
///     t = mean(d) / (sd(d) / sqrt(n)),   df = n - 1.
/// With sd(d) == 0 the result is flagged degenerate: t = 0 (p = 1) when the
/// mean is also 0, otherwise t = +-inf (p = 0).
inline PairedTTest paired_t_test(std::span<const double> diffs) {
  if (diffs.size() < 2) throw InputError("paired t-test needs at least 2 matched pairs");
  PairedTTest r;
  r.n = diffs.size();
  r.mean_diff = mean(diffs);
  r.sd_diff = sample_stddev(diffs);
  if (r.sd_diff == 0.0) {
    r.degenerate = true;
    if (r.mean_diff == 0.0) {
      r.t = 0.0;
      r.p_value = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
      r.p_value = 0.0;
    }
    return r;
  }
  r.t = r.mean_diff / (r.sd_diff / std::sqrt(static_cast<double>(r.n)));
  const boost::math::students_t dist(static_cast<double>(r.n - 1));
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

/// Pairs (treatment[i], baseline[i]); differences are treatment - baseline.
inline PairedTTest paired_t_test(std::span<const double> treatment, std::span<const double> baseline) {
  if (treatment.size() != baseline.size()) {
    throw InputError("paired t-test: " + std::to_string(treatment.size()) + " treatment values vs " +
                     std::to_string(baseline.size()) + " baseline values");
  }
  std::vector<double> d(treatment.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = treatment[i] - baseline[i];
  return paired_t_test(d);
}

}  // namespace gradmask
