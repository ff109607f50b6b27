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


// Loss terms for joint multi-modal training.
//
// Embeddings of one mini-batch arrive as one [batch x k] matrix per modality;
// row i of every matrix belongs to instance i, whose class is labels[i].
//
//   center loss   L_c = 1/2 sum_i sum_m |v_i^m - C_{y_i}|^2   (optionally / (B*M))
//   cross-entropy L_d = -1/B sum_i sum_m log p_i^m[y_i]
//   pair loss     L_m = sum_i sum_{a<b} |v_i^a - v_i^b|^2     (optionally / B)
//   combined      L   = alpha_c L_c + alpha_d L_d + alpha_m L_m
//
// Class centers are constants on the tape. They move only through
// center_delta() followed by apply_center_update().

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmcl/autodiff.hpp"
#include "cmcl/error.hpp"
#include "cmcl/tensor.hpp"

namespace cmcl {

enum class Reduction { kSum, kMean };

inline std::string_view to_string(Reduction r) { return r == Reduction::kSum ? "sum" : "mean"; }

inline Reduction parse_reduction(std::string_view s) {
  if (s == "sum") return Reduction::kSum;
  if (s == "mean") return Reduction::kMean;
  throw ConfigError("reduction", "expected 'sum' or 'mean', got '" + std::string(s) + "'");
}

struct LossWeights {
  double alpha_c = 1.0;
  double alpha_d = 1.0;
  double alpha_m = 0.1;

  void validate() const {
    auto check = [](const char* key, double v) {
      if (!std::isfinite(v) || v < 0) throw ConfigError(key, "must be finite and non-negative");
    };
    check("alpha_c", alpha_c);
    check("alpha_d", alpha_d);
    check("alpha_m", alpha_m);
  }
  bool any_positive() const { return alpha_c > 0 || alpha_d > 0 || alpha_m > 0; }
  bool operator==(const LossWeights&) const = default;
};

/// One center per class in the embedding space; row j of `centers` is C_j.
template <class T>
struct CenterBank {
  Tensor<T> centers;
  T center_lr = T(0.5);

  /// Gaussian draws scaled by 0.1.
  static CenterBank init(std::size_t num_classes, std::size_t dim, std::uint64_t seed,
                         T center_lr = T(0.5)) {
    if (num_classes == 0 || dim == 0) throw ConfigError("centers", "empty center bank");
    std::mt19937_64 rng(seed);
    std::normal_distribution<T> dist(T(0), T(1));
    std::vector<T> c(num_classes * dim);
    for (auto& x : c) x = T(0.1) * dist(rng);
    return {Tensor<T>({num_classes, dim}, std::move(c)), center_lr};
  }

  std::size_t num_classes() const { return centers.rows(); }
  std::size_t dim() const { return centers.cols(); }
};

namespace detail {

template <class T>
std::size_t check_batch(std::span<const Tensor<T>* const> emb, std::span<const std::size_t> labels,
                        std::size_t num_classes, std::size_t dim, const char* op) {
  if (emb.empty() || labels.empty()) throw ContractError(std::string(op) + ": empty batch");
  const std::size_t B = labels.size();
  for (std::size_t m = 0; m < emb.size(); ++m) {
    if (emb[m]->rows() != B || emb[m]->cols() != dim) {
      throw ContractError(std::string(op) + ": modality " + std::to_string(m) + " embeddings " +
                          shape_string(emb[m]->shape) + " do not match batch " +
                          std::to_string(B) + " x " + std::to_string(dim));
    }
  }
  for (auto y : labels) {
    if (y >= num_classes) {
      throw ContractError(std::string(op) + ": unknown label " + std::to_string(y) + " (bank has " +
                          std::to_string(num_classes) + " classes)");
    }
  }
  return B;
}

template <class T>
std::vector<const Tensor<T>*> values_of(std::span<const Var<T>> vars) {
  std::vector<const Tensor<T>*> out;
  for (const auto& v : vars) out.push_back(&v.value());
  return out;
}

}  // namespace detail

template <class T>
Var<T> cross_modal_center_loss(std::span<const Var<T>> embeddings,
                               std::span<const std::size_t> labels, const CenterBank<T>& bank,
                               Reduction reduction = Reduction::kMean) {
  auto vals = detail::values_of(embeddings);
  const std::size_t B = detail::check_batch<T>(vals, labels, bank.num_classes(), bank.dim(),
                                               "cross_modal_center_loss");
  const std::size_t k = bank.dim();
  auto& tape = *embeddings[0].tape();
  std::vector<T> gathered(B * k);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < k; ++j) gathered[i * k + j] = bank.centers(labels[i], j);
  auto targets = tape.constant(Tensor<T>({B, k}, std::move(gathered)));

  Var<T> total = squared_euclidean(embeddings[0], targets);
  for (std::size_t m = 1; m < embeddings.size(); ++m) {
    total = add(total, squared_euclidean(embeddings[m], targets));
  }
  T factor = T(0.5);
  if (reduction == Reduction::kMean) factor /= static_cast<T>(B * embeddings.size());
  return scale(total, factor);
}

/// Per-class center shift. Row j is
///   sum over batch instances of class j and all modalities of (C_j - v)
///   divided by (1 + number of batch instances of class j).
/// Rows of classes absent from the batch are zero.
template <class T>
Tensor<T> center_delta(std::span<const Tensor<T>* const> embeddings,
                       std::span<const std::size_t> labels, const CenterBank<T>& bank) {
  const std::size_t B =
      detail::check_batch<T>(embeddings, labels, bank.num_classes(), bank.dim(), "center_delta");
  const std::size_t K = bank.num_classes(), k = bank.dim();
  auto delta = Tensor<T>::zeros({K, k});
  std::vector<std::size_t> count(K, 0);
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t y = labels[i];
    ++count[y];
    for (const Tensor<T>* v : embeddings)
      for (std::size_t j = 0; j < k; ++j) delta(y, j) += bank.centers(y, j) - (*v)(i, j);
  }
  for (std::size_t y = 0; y < K; ++y) {
    const T denom = T(1) + static_cast<T>(count[y]);
    for (std::size_t j = 0; j < k; ++j) delta(y, j) /= denom;
  }
  return delta;
}

template <class T>
Tensor<T> center_delta(std::span<const Var<T>> embeddings, std::span<const std::size_t> labels,
                       const CenterBank<T>& bank) {
  auto vals = detail::values_of(embeddings);
  return center_delta<T>(std::span<const Tensor<T>* const>(vals), labels, bank);
}

/// C_j <- C_j - center_lr * delta_j, which moves each center toward the batch
/// features of its class.
template <class T>
void apply_center_update(CenterBank<T>& bank, const Tensor<T>& delta) {
  if (delta.rows() != bank.num_classes() || delta.cols() != bank.dim()) {
    throw ContractError("apply_center_update: delta " + shape_string(delta.shape) +
                        " does not match bank " + shape_string(bank.centers.shape));
  }
  for (std::size_t q = 0; q < delta.size(); ++q) {
    bank.centers.values[q] -= bank.center_lr * delta.values[q];
  }
}

/// Cross-entropy summed over modalities, averaged over instances only.
template <class T>
Var<T> discriminative_loss(std::span<const Var<T>> log_probs, std::span<const std::size_t> labels) {
  if (log_probs.empty() || labels.empty()) throw ContractError("discriminative_loss: empty batch");
  const std::size_t B = labels.size();
  const std::size_t K = log_probs[0].cols();
  for (auto y : labels) {
    if (y >= K) {
      throw ContractError("discriminative_loss: label " + std::to_string(y) + " out of range [0, " +
                          std::to_string(K) + ")");
    }
  }
  Var<T> total;
  for (std::size_t m = 0; m < log_probs.size(); ++m) {
    if (log_probs[m].rows() != B || log_probs[m].cols() != K) {
      throw ContractError("discriminative_loss: modality " + std::to_string(m) +
                          " predictions " + shape_string(log_probs[m].shape()) +
                          " do not match the batch");
    }
    auto picked = sum(gather_columns(log_probs[m], labels));
    total = m == 0 ? picked : add(total, picked);
  }
  return scale(total, T(-1) / static_cast<T>(B));
}

/// Squared distances between every unordered pair of modality embeddings of
/// the same instance.
template <class T>
Var<T> cross_modal_mse(std::span<const Var<T>> embeddings, Reduction reduction = Reduction::kMean) {
  if (embeddings.empty()) throw ContractError("cross_modal_mse: empty batch");
  const std::size_t B = embeddings[0].rows();
  const std::size_t k = embeddings[0].cols();
  for (std::size_t m = 1; m < embeddings.size(); ++m) {
    if (embeddings[m].rows() != B || embeddings[m].cols() != k) {
      throw ContractError("cross_modal_mse: modality " + std::to_string(m) + " embeddings " +
                          shape_string(embeddings[m].shape()) + " do not cover the batch");
    }
  }
  auto& tape = *embeddings[0].tape();
  if (embeddings.size() < 2) return tape.constant(Tensor<T>::scalar(T(0)));
  Var<T> total;
  bool first = true;
  for (std::size_t a = 0; a < embeddings.size(); ++a)
    for (std::size_t b = a + 1; b < embeddings.size(); ++b) {
      auto d = squared_euclidean(embeddings[a], embeddings[b]);
      total = first ? d : add(total, d);
      first = false;
    }
  if (reduction == Reduction::kMean) total = scale(total, T(1) / static_cast<T>(B));
  return total;
}

template <class T>
Var<T> combined_loss(const Var<T>& l_c, const Var<T>& l_d, const Var<T>& l_m,
                     const LossWeights& w) {
  for (const auto* v : {&l_c, &l_d, &l_m}) {
    if (v->size() != 1) throw ContractError("combined_loss: loss terms must be scalars");
  }
  return add(add(scale(l_c, static_cast<T>(w.alpha_c)), scale(l_d, static_cast<T>(w.alpha_d))),
             scale(l_m, static_cast<T>(w.alpha_m)));
}

}  // namespace cmcl
