// Copyright 2026 The cmcl Authors.
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

// Tape-based reverse-mode differentiation over dense row-major tensors.
//
// A Tape records every forward op as a node holding its value and a closure
// that maps the node's output gradient onto its inputs. Nodes are appended in
// evaluation order, so the node list is already topologically sorted and the
// backward sweep is a single reverse pass over it.
//
// Parameters live outside the tape (they outlive a training step). They are
// bound with Tape::parameter(); after backward() their gradient is added to
// Tensor::grad. Binding the same tensor twice yields the same node, so a layer
// applied to several inputs shares one set of parameters.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cmcl/error.hpp"
#include "cmcl/tensor.hpp"

namespace cmcl {

template <class T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t size() const { return value().size(); }
  T item() const;

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  // Receives the output gradient; pushes contributions into inputs via
  // Tape::accumulate.
  using Backward = std::function<void(Tape&, const std::vector<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A value that never receives a gradient.
  Var<T> constant(Tensor<T> value) {
    return push(std::move(value), false, nullptr, {}, "constant");
  }

  /// A free input whose gradient is kept on the tape (see grad()).
  Var<T> variable(Tensor<T> value) {
    return push(std::move(value), true, nullptr, {}, "variable");
  }

  /// Binds an external tensor. Gradients flow back into `param.grad` when
  /// `param.requires_grad` is set.
  Var<T> parameter(Tensor<T>& param) {
    if (auto it = bound_.find(&param); it != bound_.end()) return Var<T>(this, it->second);
    Tensor<T> copy(param.shape, param.values);
    auto v = push(std::move(copy), param.requires_grad, &param, {}, "parameter");
    bound_.emplace(&param, v.id());
    return v;
  }

  /// Records an op result. Non-finite output values are rejected here so that
  /// a NaN never reaches a parameter or a center update.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward,
                const char* op) {
    for (const T& x : value.values) {
      if (!std::isfinite(x)) throw NumericError(std::string(op) + " produced a non-finite value");
    }
    bool needs = false;
    for (const auto& in : inputs) {
      check_owned(in, op);
      needs = needs || nodes_[in.id()].needs_grad;
    }
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : Backward{}, op);
  }

  /// Reverse sweep from a scalar loss. Each node is visited once, in reverse
  /// recording order. May be called once per tape.
  void backward(const Var<T>& loss) {
    check_owned(loss, "backward");
    if (nodes_[loss.id()].value.size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_string(nodes_[loss.id()].value.shape));
    }
    if (swept_) throw ContractError("backward already ran on this tape");
    swept_ = true;
    if (!nodes_[loss.id()].needs_grad) return;
    nodes_[loss.id()].grad.assign(1, T(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.needs_grad || node.grad.empty()) continue;
      // Closures only touch the grads of earlier nodes, never their own.
      if (node.backward) node.backward(*this, node.grad);
      if (node.bound != nullptr) {
        auto& p = *node.bound;
        if (!p.grad || p.grad->size() != p.values.size()) p.grad.emplace(p.values.size(), T(0));
        for (std::size_t k = 0; k < node.grad.size(); ++k) (*p.grad)[k] += node.grad[k];
      }
    }
  }

  /// Gradient of a node after backward(); zeros when nothing reached it.
  std::vector<T> grad(const Var<T>& v) const {
    check_owned(v, "grad");
    const Node& node = nodes_[v.id()];
    if (node.grad.empty()) return std::vector<T>(node.value.size(), T(0));
    return node.grad;
  }

  /// Gradient buffer for an input inside a backward closure, or nullptr when
  /// that input does not need a gradient.
  T* accumulate(std::size_t id) {
    Node& node = nodes_[id];
    if (!node.needs_grad) return nullptr;
    if (node.grad.empty()) node.grad.assign(node.value.size(), T(0));
    return node.grad.data();
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }
  bool needs_grad(const Var<T>& v) const { return nodes_[v.id()].needs_grad; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool needs_grad = false;
    Tensor<T>* bound = nullptr;
    Backward backward;
    const char* op = "";
  };

  Var<T> push(Tensor<T> value, bool needs, Tensor<T>* bound, Backward backward, const char* op) {
    nodes_.push_back(Node{std::move(value), {}, needs, bound, std::move(backward), op});
    return Var<T>(this, nodes_.size() - 1);
  }

  void check_owned(const Var<T>& v, const char* op) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw ContractError(std::string(op) + ": variable does not belong to this tape");
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> bound_;
  bool swept_ = false;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  if (tape_ == nullptr) throw ContractError("use of an unbound variable");
  return tape_->value(id_);
}

template <class T>
T Var<T>::item() const {
  const auto& v = value();
  if (v.size() != 1) throw ContractError("item() on non-scalar of shape " + shape_string(v.shape));
  return v.values[0];
}

namespace detail {

template <class T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ContractError(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape();
}

template <class T>
Tensor<T> scalar_tensor(T v) {
  return Tensor<T>({1}, {v});
}

}  // namespace detail

/// Matrix product of a [r x c] and b [c x k].
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::same_tape(a, b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  const std::size_t r = A.rows(), c = A.cols(), k = B.cols();
  if (B.rows() != c) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_string(A.shape) + " x " +
                     shape_string(B.shape));
  }
  std::vector<T> out(r * k, T(0));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < c; ++p) {
      const T aip = A.values[i * c + p];
      if (aip == T(0)) continue;
      const T* brow = &B.values[p * k];
      T* orow = &out[i * k];
      for (std::size_t j = 0; j < k; ++j) orow[j] += aip * brow[j];
    }
  }
  const auto ia = a.id(), ib = b.id();
  return tape.record(
      Tensor<T>({r, k}, std::move(out)), {a, b},
      [ia, ib, r, c, k](Tape<T>& t, const std::vector<T>& g) {
        const auto& Av = t.value(ia).values;
        const auto& Bv = t.value(ib).values;
        if (T* ga = t.accumulate(ia)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t p = 0; p < c; ++p) {
              T s = T(0);
              for (std::size_t j = 0; j < k; ++j) s += g[i * k + j] * Bv[p * k + j];
              ga[i * c + p] += s;
            }
        }
        if (T* gb = t.accumulate(ib)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t p = 0; p < c; ++p) {
              const T aip = Av[i * c + p];
              if (aip == T(0)) continue;
              for (std::size_t j = 0; j < k; ++j) gb[p * k + j] += aip * g[i * k + j];
            }
        }
      },
      "matmul");
}

/// Adds a row vector `bias` (length c) to every row of x [n x c].
template <class T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  auto& tape = detail::same_tape(x, bias, "add_bias");
  const auto& X = x.value();
  const std::size_t n = X.rows(), c = X.cols();
  if (bias.size() != c) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not fit rows of " +
                     shape_string(X.shape));
  }
  const auto& B = bias.value().values;
  std::vector<T> out(X.values);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += B[j];
  const auto ix = x.id(), ib = bias.id();
  return tape.record(
      Tensor<T>(X.shape, std::move(out)), {x, bias},
      [ix, ib, n, c](Tape<T>& t, const std::vector<T>& g) {
        if (T* gx = t.accumulate(ix))
          for (std::size_t q = 0; q < n * c; ++q) gx[q] += g[q];
        if (T* gb = t.accumulate(ib))
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      },
      "add_bias");
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::same_tape(a, b, "add");
  if (a.size() != b.size()) {
    throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<T> out(a.value().values);
  const auto& bv = b.value().values;
  for (std::size_t q = 0; q < out.size(); ++q) out[q] += bv[q];
  const auto ia = a.id(), ib = b.id();
  return tape.record(
      Tensor<T>(a.shape(), std::move(out)), {a, b},
      [ia, ib](Tape<T>& t, const std::vector<T>& g) {
        if (T* ga = t.accumulate(ia))
          for (std::size_t q = 0; q < g.size(); ++q) ga[q] += g[q];
        if (T* gb = t.accumulate(ib))
          for (std::size_t q = 0; q < g.size(); ++q) gb[q] += g[q];
      },
      "add");
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  auto& tape = *x.tape();
  std::vector<T> out(x.value().values);
  for (auto& v : out) v *= factor;
  const auto ix = x.id();
  return tape.record(
      Tensor<T>(x.shape(), std::move(out)), {x},
      [ix, factor](Tape<T>& t, const std::vector<T>& g) {
        if (T* gx = t.accumulate(ix))
          for (std::size_t q = 0; q < g.size(); ++q) gx[q] += factor * g[q];
      },
      "scale");
}

/// Elementwise max(x, 0). The subgradient at exactly 0 is 0.
template <class T>
Var<T> relu(const Var<T>& x) {
  auto& tape = *x.tape();
  std::vector<T> out(x.value().values);
  for (auto& v : out) v = v > T(0) ? v : T(0);
  const auto ix = x.id();
  return tape.record(
      Tensor<T>(x.shape(), std::move(out)), {x},
      [ix](Tape<T>& t, const std::vector<T>& g) {
        const auto& xv = t.value(ix).values;
        if (T* gx = t.accumulate(ix))
          for (std::size_t q = 0; q < g.size(); ++q)
            if (xv[q] > T(0)) gx[q] += g[q];
      },
      "relu");
}

/// Row-wise log-softmax of x [n x K], K >= 2, in max-subtracted form.
template <class T>
Var<T> log_softmax(const Var<T>& x) {
  auto& tape = *x.tape();
  const auto& X = x.value();
  const std::size_t n = X.rows(), K = X.cols();
  if (K < 2) throw ContractError("log_softmax needs at least 2 classes, got " + std::to_string(K));
  std::vector<T> out(n * K);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = &X.values[i * K];
    const T mx = *std::max_element(row, row + K);
    T s = T(0);
    for (std::size_t j = 0; j < K; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < K; ++j) out[i * K + j] = row[j] - lse;
  }
  std::vector<T> prob(n * K);
  for (std::size_t q = 0; q < prob.size(); ++q) prob[q] = std::exp(out[q]);
  const auto ix = x.id();
  return tape.record(
      Tensor<T>(X.shape, std::move(out)), {x},
      [ix, n, K, prob = std::move(prob)](Tape<T>& t, const std::vector<T>& g) {
        if (T* gx = t.accumulate(ix))
          for (std::size_t i = 0; i < n; ++i) {
            T gs = T(0);
            for (std::size_t j = 0; j < K; ++j) gs += g[i * K + j];
            for (std::size_t j = 0; j < K; ++j) gx[i * K + j] += g[i * K + j] - prob[i * K + j] * gs;
          }
      },
      "log_softmax");
}

/// Sum of squared differences over all entries of two equally sized tensors.
template <class T>
Var<T> squared_euclidean(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::same_tape(a, b, "squared_euclidean");
  if (a.size() != b.size()) {
    throw ShapeError("squared_euclidean: lengths differ, " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const auto& av = a.value().values;
  const auto& bv = b.value().values;
  T s = T(0);
  for (std::size_t q = 0; q < av.size(); ++q) {
    const T d = av[q] - bv[q];
    s += d * d;
  }
  const auto ia = a.id(), ib = b.id();
  return tape.record(
      detail::scalar_tensor(s), {a, b},
      [ia, ib](Tape<T>& t, const std::vector<T>& g) {
        const auto& A = t.value(ia).values;
        const auto& B = t.value(ib).values;
        T* ga = t.accumulate(ia);
        T* gb = t.accumulate(ib);
        for (std::size_t q = 0; q < A.size(); ++q) {
          const T d = T(2) * (A[q] - B[q]) * g[0];
          if (ga) ga[q] += d;
          if (gb) gb[q] -= d;
        }
      },
      "squared_euclidean");
}

template <class T>
Var<T> sum(const Var<T>& x) {
  auto& tape = *x.tape();
  T s = T(0);
  for (const T& v : x.value().values) s += v;
  const auto ix = x.id();
  return tape.record(
      detail::scalar_tensor(s), {x},
      [ix](Tape<T>& t, const std::vector<T>& g) {
        if (T* gx = t.accumulate(ix))
          for (std::size_t q = 0; q < t.value(ix).size(); ++q) gx[q] += g[0];
      },
      "sum");
}

/// out[i] = x[i, index[i]] for x [n x K]; result has shape [n].
template <class T>
Var<T> gather_columns(const Var<T>& x, std::span<const std::size_t> index) {
  auto& tape = *x.tape();
  const auto& X = x.value();
  const std::size_t n = X.rows(), K = X.cols();
  if (index.size() != n) {
    throw ShapeError("gather_columns: " + std::to_string(index.size()) + " indices for " +
                     std::to_string(n) + " rows");
  }
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] >= K) throw ContractError("gather_columns: column index out of range");
    out[i] = X.values[i * K + index[i]];
  }
  const auto ix = x.id();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape.record(
      Tensor<T>({n}, std::move(out)), {x},
      [ix, K, idx = std::move(idx)](Tape<T>& t, const std::vector<T>& g) {
        if (T* gx = t.accumulate(ix))
          for (std::size_t i = 0; i < idx.size(); ++i) gx[i * K + idx[i]] += g[i];
      },
      "gather_columns");
}

/// Column-wise max over consecutive row segments of x [P x c]. Segment s
/// spans rows [offsets[s], offsets[s+1]); the result is [S x c]. The gradient
/// of each output goes to the first row attaining the max.
template <class T>
Var<T> segment_max(const Var<T>& x, std::span<const std::size_t> offsets) {
  auto& tape = *x.tape();
  const auto& X = x.value();
  const std::size_t P = X.rows(), c = X.cols();
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != P) {
    throw ContractError("segment_max: offsets must run from 0 to the row count");
  }
  const std::size_t S = offsets.size() - 1;
  std::vector<T> out(S * c);
  std::vector<std::size_t> argmax(S * c);
  for (std::size_t s = 0; s < S; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ContractError("segment_max: empty segment");
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = offsets[s];
      for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r)
        if (X.values[r * c + j] > X.values[best * c + j]) best = r;
      argmax[s * c + j] = best;
      out[s * c + j] = X.values[best * c + j];
    }
  }
  const auto ix = x.id();
  return tape.record(
      Tensor<T>({S, c}, std::move(out)), {x},
      [ix, c, argmax = std::move(argmax)](Tape<T>& t, const std::vector<T>& g) {
        if (T* gx = t.accumulate(ix))
          for (std::size_t q = 0; q < argmax.size(); ++q) gx[argmax[q] * c + q % c] += g[q];
      },
      "segment_max");
}

}  // namespace cmcl
