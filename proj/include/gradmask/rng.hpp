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

// Counter-based random streams. Every random decision in the library is a
// pure function of (seed, stream tag, counter), so results do not depend on
// the order in which streams are consumed.

#include <array>
#include <cstdint>
#include <string_view>

namespace gradmask {

/// Philox4x32 with 10 rounds, as in the Random123 library.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter block(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Derive a stream key from a user seed and a textual tag (parameter name,
/// "shuffle", "init", ...).
constexpr std::uint64_t stream_key(std::uint64_t seed, std::string_view tag) noexcept {
  return splitmix64(splitmix64(seed) ^ fnv1a64(tag));
}

/// Pack two 32-bit coordinates (e.g. epoch, batch) into a stream id.
constexpr std::uint64_t stream_id(std::uint32_t major, std::uint32_t minor) noexcept {
  return (std::uint64_t{major} << 32) | minor;
}

/// Sequential view over a Philox stream: key = 64-bit stream key, the upper
/// counter half = stream id, the lower half = block index.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t key, std::uint64_t stream = 0) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        stream_(stream) {}

  constexpr std::uint32_t next_u32() noexcept {
    if (lane_ == 4) refill();
    return buf_[lane_++];
  }

  constexpr std::uint64_t next_u64() noexcept {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  constexpr double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); n must be positive. Rejection sampling keeps
  /// the result exactly uniform.
  constexpr std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// True with probability `prob`, resolved on 32 bits. prob >= 1 is always
  /// true and prob <= 0 always false.
  constexpr bool bernoulli(double prob) noexcept {
    if (prob >= 1.0) {
      next_u32();
      return true;
    }
    if (prob <= 0.0) {
      next_u32();
      return false;
    }
    const auto threshold = static_cast<std::uint64_t>(prob * 4294967296.0);
    return next_u32() < threshold;
  }

  constexpr std::uint64_t blocks_consumed() const noexcept { return block_; }

 private:
  constexpr void refill() noexcept {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_),
                                  static_cast<std::uint32_t>(block_ >> 32),
                                  static_cast<std::uint32_t>(stream_),
                                  static_cast<std::uint32_t>(stream_ >> 32)};
    buf_ = Philox4x32::block(ctr, key_);
    ++block_;
    lane_ = 0;
  }

  Philox4x32::Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Philox4x32::Counter buf_{};
  int lane_ = 4;
};

}  // namespace gradmask
