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

// Checkpoint files.
//
//   line 1   : "gradmask-checkpoint 1\n"
//   u64      : number of records
//   records  : u32 name length, name bytes (UTF-8, no terminator),
//              u32 rank, rank x u64 dims, prod(dims) x f64 values
//
// All integers and doubles are little-endian.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gradmask/errors.hpp"
#include "gradmask/transformer.hpp"

namespace gradmask {

inline constexpr const char* kCheckpointMagic = "gradmask-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 4);
}

inline std::uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw IoError(path + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{buf[i]} << (8 * i);
  return v;
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char buf[4];
  if (!is.read(reinterpret_cast<char*>(buf), 4)) throw IoError(path + ": truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{buf[i]} << (8 * i);
  return v;
}

}  // namespace detail

struct CheckpointRecord {
  std::string name;
  Tensor tensor;
};

inline void save_checkpoint(const ParamSet& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path + ": cannot open for writing");
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  detail::put_u64(os, params.size());
  for (const Param& p : params) {
    detail::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& shape = p.tensor.shape();
    detail::put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t dim : shape) detail::put_u64(os, dim);
    for (double v : p.tensor.data()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw IoError(path + ": write failed");
}

inline std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path + ": cannot open checkpoint");
  std::string header;
  std::getline(is, header);
  const std::string expected = std::string(kCheckpointMagic) + ' ' + std::to_string(kCheckpointVersion);
  if (header != expected) throw IoError(path + ": bad checkpoint header '" + header + "'");
  const std::uint64_t count = detail::get_u64(is, path);
  std::vector<CheckpointRecord> out;
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::uint32_t len = detail::get_u32(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError(path + ": truncated checkpoint");
    const std::uint32_t rank = detail::get_u32(is, path);
    Shape shape(rank);
    for (auto& dim : shape) dim = detail::get_u64(is, path);
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = std::bit_cast<double>(detail::get_u64(is, path));
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

/// Overwrite every parameter of `params` from the file. Names and shapes must
/// match exactly.
inline void load_checkpoint(ParamSet& params, const std::string& path) {
  const auto records = read_checkpoint(path);
  if (records.size() != params.size()) {
    throw IoError(path + ": checkpoint has " + std::to_string(records.size()) + " tensors, model has " +
                  std::to_string(params.size()));
  }
  for (const auto& rec : records) {
    if (!params.contains(rec.name)) throw IoError(path + ": unknown tensor '" + rec.name + "'");
    Tensor& dst = params[params.index_of(rec.name)].tensor;
    if (dst.shape() != rec.tensor.shape()) {
      throw IoError(path + ": tensor '" + rec.name + "' has shape " + shape_string(rec.tensor.shape()) +
                    ", expected " + shape_string(dst.shape()));
    }
    std::copy(rec.tensor.data().begin(), rec.tensor.data().end(), dst.data().begin());
  }
}

}  // namespace gradmask
