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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "gradmask/rng.hpp"
#include "gradmask/stats.hpp"

namespace gradmask {
namespace {

// Closed-form Student-t CDF for 4 degrees of freedom.
double student4_cdf(double t) {
  const double x = t / std::sqrt(4.0 + t * t);
  return 0.5 + 0.75 * x * (1.0 - x * x / 3.0);
}

TEST(PairedTTest, HandComputedExample) {
  const std::vector<double> d{2, -1, 3, 0, 1};
  // mean 1, sum of squared deviations 10, sd sqrt(2.5), t = sqrt(2).
  const PairedTTest r = paired_t_test(d);
  EXPECT_EQ(r.n, 5u);
  EXPECT_NEAR(r.mean_diff, 1.0, 1e-15);
  EXPECT_NEAR(r.sd_diff, std::sqrt(2.5), 1e-15);
  EXPECT_NEAR(r.t, std::sqrt(2.0), 1e-10);
  EXPECT_NEAR(r.p_value, 2.0 * (1.0 - student4_cdf(std::sqrt(2.0))), 1e-10);
  EXPECT_FALSE(r.degenerate);
}

TEST(PairedTTest, IdenticalRecordsGiveZeroFlagged) {
  const std::vector<double> a{0.8, 0.9, 0.7}, b{0.8, 0.9, 0.7};
  const PairedTTest r = paired_t_test(a, b);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(PairedTTest, ConstantNonzeroDifferencesAreInfiniteAndFlagged) {
  const std::vector<double> d{1, 1, 1, 1};
  const PairedTTest r = paired_t_test(d);
  EXPECT_TRUE(std::isinf(r.t));
  EXPECT_GT(r.t, 0.0);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p_value, 0.0);
}

TEST(PairedTTest, TooFewOrUnmatchedPairsAreInputErrors) {
  EXPECT_THROW(paired_t_test(std::vector<double>{1.0}), InputError);
  const std::vector<double> a{1, 2, 3}, b{1, 2};
  EXPECT_THROW(paired_t_test(a, b), InputError);
}

TEST(PairedTTest, RandomVectorsMatchSumOfSquaresFormula) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CounterRng rng(stream_key(seed, "ttest"));
    const std::size_t n = 3 + rng.below(20);
    std::vector<double> d(n);
    double s = 0.0, s2 = 0.0;
    for (auto& x : d) {
      x = rng.uniform(-2.0, 3.0);
      s += x;
      s2 += x * x;
    }
    const double m = s / n;
    const double sd = std::sqrt((s2 - n * m * m) / (n - 1));
    EXPECT_NEAR(paired_t_test(d).t, m / (sd / std::sqrt(static_cast<double>(n))), 1e-10);
  }
}

}  // namespace
}  // namespace gradmask
