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

// Tape-based reverse-mode automatic differentiation over 2-D tensors.
//
// A Tape records every operation in execution order, so node ids are already
// a topological order; backward() walks them once in reverse. Parameters enter
// the tape as leaves bound to an external Tensor and receive their gradient in
// that tensor's accumulator.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gradmask/errors.hpp"
#include "gradmask/tensor.hpp"

namespace gradmask {

using NodeId = std::uint32_t;

enum class OpKind : std::uint8_t {
  kLeaf,
  kConstant,
  kMatMul,
  kTranspose,
  kAdd,
  kAddRow,
  kScale,
  kMul,
  kRelu,
  kSoftmaxRows,
  kLayerNorm,
  kConcatCols,
  kConcatRows,
  kGatherRows,
  kMeanRows,
  kSum,
  kCrossEntropy,
};

struct TapeNode {
  OpKind op = OpKind::kConstant;
  std::vector<NodeId> inputs;
  Tensor value;
  Tensor* param = nullptr;
  bool needs_grad = false;
  std::vector<double> grad;
  // Op-specific forward state: softmax/cross-entropy probabilities,
  // layer-norm normalized input followed by per-row inverse std.
  std::vector<double> saved;
  std::vector<std::size_t> index;
  double scalar = 0.0;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

namespace detail {

inline void check_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

// c (m x n) += a (m x k) * b (k x n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c (m x k) += a (m x n) * b^T, b is (k x n)
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c (k x n) += a^T * b, a is (m x k), b is (m x n)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to `t`. If t.requires_grad(), backward() accumulates into
  /// t.grad(). The tensor must outlive every backward() call on this tape.
  Var parameter(Tensor& t) {
    TapeNode node;
    node.op = OpKind::kLeaf;
    node.param = &t;
    node.needs_grad = t.requires_grad();
    return push(std::move(node));
  }

  /// Leaf holding a copy of `t`; never receives gradient.
  Var constant(Tensor t) {
    TapeNode node;
    node.op = OpKind::kConstant;
    node.value = std::move(t);
    return push(std::move(node));
  }

  const Tensor& value(NodeId id) const {
    const TapeNode& n = nodes_[id];
    return n.param ? *n.param : n.value;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const TapeNode& node(NodeId id) const { return nodes_[id]; }

  /// Adjoint of an intermediate node after the last backward(); empty if the
  /// node received no gradient.
  std::span<const double> adjoint(NodeId id) const { return nodes_[id].grad; }

  Var push(TapeNode node) {
    if (node.op != OpKind::kLeaf && node.op != OpKind::kConstant) {
      for (NodeId in : node.inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
    }
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
  }

  /// Reverse sweep from a scalar loss. Adjoints on the tape are reset first,
  /// so calling twice adds the same gradient to parameters twice.
  void backward(const Var& loss);

 private:
  std::vector<double>& grad_of(NodeId id) {
    auto& g = nodes_[id].grad;
    if (g.empty()) g.assign(value(id).size(), 0.0);
    return g;
  }

  void propagate(NodeId id);

  std::vector<TapeNode> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------- ops

inline Var matmul(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string({av.rows(), av.cols()}) +
                         " and " + shape_string({bv.rows(), bv.cols()}));
  }
  TapeNode node;
  node.op = OpKind::kMatMul;
  node.inputs = {a.id(), b.id()};
  node.value = Tensor({av.rows(), bv.cols()});
  detail::gemm_nn(av.data().data(), bv.data().data(), node.value.data().data(), av.rows(), av.cols(),
                  bv.cols());
  return a.tape().push(std::move(node));
}

inline Var transpose(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  TapeNode node;
  node.op = OpKind::kTranspose;
  node.inputs = {a.id()};
  node.value = Tensor({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) node.value[j * m + i] = av[i * n + j];
  return a.tape().push(std::move(node));
}

inline Var add(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw DimensionError("add: shapes differ: " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  TapeNode node;
  node.op = OpKind::kAdd;
  node.inputs = {a.id(), b.id()};
  node.value = Tensor(av.shape());
  for (std::size_t i = 0; i < bv.size(); ++i) node.value[i] = av[i] + bv[i];
  return a.tape().push(std::move(node));
}

/// x (m x n) + row (1 x n), broadcast over rows.
inline Var add_row(const Var& x, const Var& row) {
  detail::check_same_tape(x, row);
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  if (rv.size() != xv.cols()) {
    throw DimensionError("add_row: row vector " + shape_string(rv.shape()) + " does not match " +
                         shape_string(xv.shape()));
  }
  TapeNode node;
  node.op = OpKind::kAddRow;
  node.inputs = {x.id(), row.id()};
  node.value = Tensor({xv.rows(), xv.cols()});
  const std::size_t n = xv.cols();
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) node.value[i * n + j] = xv[i * n + j] + rv[j];
  return x.tape().push(std::move(node));
}

inline Var scale(const Var& a, double s) {
  const Tensor& av = a.value();
  TapeNode node;
  node.op = OpKind::kScale;
  node.inputs = {a.id()};
  node.scalar = s;
  node.value = Tensor(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) node.value[i] = av[i] * s;
  return a.tape().push(std::move(node));
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("mul: shapes differ: " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  TapeNode node;
  node.op = OpKind::kMul;
  node.inputs = {a.id(), b.id()};
  node.value = Tensor(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) node.value[i] = av[i] * bv[i];
  return a.tape().push(std::move(node));
}

inline Var relu(const Var& a) {
  const Tensor& av = a.value();
  TapeNode node;
  node.op = OpKind::kRelu;
  node.inputs = {a.id()};
  node.value = Tensor(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) node.value[i] = av[i] > 0.0 ? av[i] : 0.0;
  return a.tape().push(std::move(node));
}

/// Row-wise softmax with max subtraction.
inline Var softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  TapeNode node;
  node.op = OpKind::kSoftmaxRows;
  node.inputs = {a.id()};
  node.value = Tensor({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = av.data().data() + i * n;
    double* y = node.value.data().data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (y[j] = std::exp(x[j] - mx));
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
  }
  return a.tape().push(std::move(node));
}

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Per-row standardization (population variance, epsilon inside the square
/// root) followed by gain * xhat + bias.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  detail::check_same_tape(x, gain);
  detail::check_same_tape(x, bias);
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (n < 2) throw DimensionError("layer_norm: rows need at least 2 entries, got " + shape_string(xv.shape()));
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match " + shape_string(xv.shape()));
  }
  const Tensor& g = gain.value();
  const Tensor& b = bias.value();
  TapeNode node;
  node.op = OpKind::kLayerNorm;
  node.inputs = {x.id(), gain.id(), bias.id()};
  node.value = Tensor({m, n});
  node.saved.resize(m * n + m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    node.saved[m * n + i] = inv_std;
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (row[j] - mean) * inv_std;
      node.saved[i * n + j] = xhat;
      node.value[i * n + j] = g[j] * xhat + b[j];
    }
  }
  return x.tape().push(std::move(node));
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::check_same_tape(parts[0], p);
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row counts differ: " + shape_string(parts[0].shape()) + " and " +
                           shape_string(p.shape()));
    }
    total += p.cols();
  }
  TapeNode node;
  node.op = OpKind::kConcatCols;
  node.value = Tensor({m, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    node.inputs.push_back(p.id());
    const Tensor& pv = p.value();
    const std::size_t w = pv.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.data().data() + i * w, w, node.value.data().data() + i * total + offset);
    offset += w;
  }
  return parts[0].tape().push(std::move(node));
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::check_same_tape(parts[0], p);
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column counts differ: " + shape_string(parts[0].shape()) +
                           " and " + shape_string(p.shape()));
    }
    total += p.rows();
  }
  TapeNode node;
  node.op = OpKind::kConcatRows;
  node.value = Tensor({total, n});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    node.inputs.push_back(p.id());
    const Tensor& pv = p.value();
    std::copy(pv.data().begin(), pv.data().end(), node.value.data().begin() + offset);
    offset += pv.size();
  }
  return parts[0].tape().push(std::move(node));
}

/// Rows of `table` selected by `ids`; the embedding lookup.
inline Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  const std::size_t r = tv.rows(), n = tv.cols();
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  TapeNode node;
  node.op = OpKind::kGatherRows;
  node.inputs = {table.id()};
  node.index.assign(ids.begin(), ids.end());
  node.value = Tensor({ids.size(), n});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= r) {
      throw InputError("gather_rows: index " + std::to_string(ids[i]) + " out of range for " +
                       shape_string(tv.shape()));
    }
    std::copy_n(tv.data().data() + ids[i] * n, n, node.value.data().data() + i * n);
  }
  return table.tape().push(std::move(node));
}

inline Var embedding_lookup(const Var& table, std::span<const std::size_t> ids) {
  return gather_rows(table, ids);
}

/// Mean over rows: (m x n) -> (1 x n).
inline Var mean_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  TapeNode node;
  node.op = OpKind::kMeanRows;
  node.inputs = {a.id()};
  node.value = Tensor({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) node.value[j] += av[i * n + j];
  for (std::size_t j = 0; j < n; ++j) node.value[j] /= static_cast<double>(m);
  return a.tape().push(std::move(node));
}

inline Var sum(const Var& a) {
  const Tensor& av = a.value();
  TapeNode node;
  node.op = OpKind::kSum;
  node.inputs = {a.id()};
  double total = 0.0;
  for (double v : av.data()) total += v;
  node.value = Tensor({1}, {total});
  return a.tape().push(std::move(node));
}

/// Mean over rows of -sum_c Y[i,c] * log softmax(logits)[i,c]. Y is typically
/// one-hot.
inline Var cross_entropy(const Var& logits, const Tensor& targets) {
  const Tensor& z = logits.value();
  const std::size_t m = z.rows(), c = z.cols();
  if (targets.rows() != m || targets.cols() != c) {
    throw DimensionError("cross_entropy: targets " + shape_string(targets.shape()) +
                         " do not match logits " + shape_string(z.shape()));
  }
  TapeNode node;
  node.op = OpKind::kCrossEntropy;
  node.inputs = {logits.id()};
  node.saved.resize(2 * m * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = z.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const double log_total = std::log(total) + mx;
    for (std::size_t j = 0; j < c; ++j) {
      const double logp = row[j] - log_total;
      node.saved[i * c + j] = std::exp(logp);
      node.saved[m * c + i * c + j] = targets[i * c + j];
      loss -= targets[i * c + j] * logp;
    }
  }
  node.value = Tensor({1}, {loss / static_cast<double>(m)});
  return logits.tape().push(std::move(node));
}

inline Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor y({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw InputError("label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
    y.at(i, labels[i]) = 1.0;
  }
  return y;
}

inline Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  return cross_entropy(logits, one_hot(labels, logits.cols()));
}

// ---------------------------------------------------------------- backward

inline void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (value(loss.id()).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_string(value(loss.id()).shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  grad_of(loss.id())[0] = 1.0;
  for (NodeId id = loss.id() + 1; id-- > 0;) {
    TapeNode& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.op == OpKind::kLeaf) {
      if (n.param && n.param->requires_grad()) {
        auto g = n.param->grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      }
      continue;
    }
    propagate(id);
  }
}

inline void Tape::propagate(NodeId id) {
  // grad_of() only touches input nodes and nodes_ never reallocates during
  // the sweep, so `n` and `dy` stay valid.
  TapeNode& n = nodes_[id];
  const std::vector<double>& dy = n.grad;
  auto wants = [&](NodeId in) { return nodes_[in].needs_grad; };

  switch (n.op) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      break;
    case OpKind::kMatMul: {
      const NodeId ia = n.inputs[0], ib = n.inputs[1];
      const Tensor& a = value(ia);
      const Tensor& b = value(ib);
      const std::size_t m = a.rows(), k = a.cols(), c = b.cols();
      if (wants(ia)) detail::gemm_nt(dy.data(), b.data().data(), grad_of(ia).data(), m, c, k);
      if (wants(ib)) detail::gemm_tn(a.data().data(), dy.data(), grad_of(ib).data(), m, k, c);
      break;
    }
    case OpKind::kTranspose: {
      const NodeId ia = n.inputs[0];
      if (!wants(ia)) break;
      const std::size_t m = value(ia).rows(), c = value(ia).cols();
      auto& g = grad_of(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += dy[j * m + i];
      break;
    }
    case OpKind::kAdd: {
      for (NodeId in : n.inputs) {
        if (!wants(in)) continue;
        auto& g = grad_of(in);
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
      break;
    }
    case OpKind::kAddRow: {
      const NodeId ix = n.inputs[0], ir = n.inputs[1];
      const std::size_t c = n.value.cols(), m = n.value.rows();
      if (wants(ix)) {
        auto& g = grad_of(ix);
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
      if (wants(ir)) {
        auto& g = grad_of(ir);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j];
      }
      break;
    }
    case OpKind::kScale: {
      const NodeId ia = n.inputs[0];
      if (!wants(ia)) break;
      auto& g = grad_of(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += n.scalar * dy[i];
      break;
    }
    case OpKind::kMul: {
      const NodeId ia = n.inputs[0], ib = n.inputs[1];
      const Tensor& a = value(ia);
      const Tensor& b = value(ib);
      if (wants(ia)) {
        auto& g = grad_of(ia);
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * b[i];
      }
      if (wants(ib)) {
        auto& g = grad_of(ib);
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * a[i];
      }
      break;
    }
    case OpKind::kRelu: {
      const NodeId ia = n.inputs[0];
      if (!wants(ia)) break;
      const Tensor& a = value(ia);
      auto& g = grad_of(ia);
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (a[i] > 0.0) g[i] += dy[i];
      break;
    }
    case OpKind::kSoftmaxRows: {
      const NodeId ia = n.inputs[0];
      if (!wants(ia)) break;
      const std::size_t m = n.value.rows(), c = n.value.cols();
      auto& g = grad_of(ia);
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = n.value.data().data() + i * c;
        const double* d = dy.data() + i * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += d[j] * y[j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (d[j] - dot);
      }
      break;
    }
    case OpKind::kLayerNorm: {
      const NodeId ix = n.inputs[0], ig = n.inputs[1], ib = n.inputs[2];
      const std::size_t m = n.value.rows(), c = n.value.cols();
      const double* xhat = n.saved.data();
      const double* inv_std = n.saved.data() + m * c;
      if (wants(ig)) {
        auto& g = grad_of(ig);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j] * xhat[i * c + j];
      }
      if (wants(ib)) {
        auto& g = grad_of(ib);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j];
      }
      if (wants(ix)) {
        const Tensor& gain = value(ig);
        auto& g = grad_of(ix);
        const double inv_n = 1.0 / static_cast<double>(c);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double d = dy[i * c + j] * gain[j];
            mean_d += d;
            mean_dx += d * xhat[i * c + j];
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          for (std::size_t j = 0; j < c; ++j) {
            const double d = dy[i * c + j] * gain[j];
            g[i * c + j] += inv_std[i] * (d - mean_d - xhat[i * c + j] * mean_dx);
          }
        }
      }
      break;
    }
    case OpKind::kConcatCols: {
      const std::size_t m = n.value.rows(), total = n.value.cols();
      std::size_t offset = 0;
      for (NodeId in : n.inputs) {
        const std::size_t w = value(in).cols();
        if (wants(in)) {
          auto& g = grad_of(in);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * w + j] += dy[i * total + offset + j];
        }
        offset += w;
      }
      break;
    }
    case OpKind::kConcatRows: {
      std::size_t offset = 0;
      for (NodeId in : n.inputs) {
        const std::size_t sz = value(in).size();
        if (wants(in)) {
          auto& g = grad_of(in);
          for (std::size_t i = 0; i < sz; ++i) g[i] += dy[offset + i];
        }
        offset += sz;
      }
      break;
    }
    case OpKind::kGatherRows: {
      const NodeId it = n.inputs[0];
      if (!wants(it)) break;
      const std::size_t c = n.value.cols();
      auto& g = grad_of(it);
      for (std::size_t i = 0; i < n.index.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) g[n.index[i] * c + j] += dy[i * c + j];
      break;
    }
    case OpKind::kMeanRows: {
      const NodeId ia = n.inputs[0];
      if (!wants(ia)) break;
      const std::size_t m = value(ia).rows(), c = value(ia).cols();
      const double inv_m = 1.0 / static_cast<double>(m);
      auto& g = grad_of(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += dy[j] * inv_m;
      break;
    }
    case OpKind::kSum: {
      const NodeId ia = n.inputs[0];
      if (!wants(ia)) break;
      auto& g = grad_of(ia);
      for (double& v : g) v += dy[0];
      break;
    }
    case OpKind::kCrossEntropy: {
      const NodeId ia = n.inputs[0];
      if (!wants(ia)) break;
      const Tensor& z = value(ia);
      const std::size_t m = z.rows(), c = z.cols();
      const double* p = n.saved.data();
      const double* y = n.saved.data() + m * c;
      const double coef = dy[0] / static_cast<double>(m);
      auto& g = grad_of(ia);
      for (std::size_t i = 0; i < m; ++i) {
        double ysum = 0.0;
        for (std::size_t j = 0; j < c; ++j) ysum += y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += coef * (p[i * c + j] * ysum - y[i * c + j]);
      }
      break;
    }
  }
}

}  // namespace gradmask
