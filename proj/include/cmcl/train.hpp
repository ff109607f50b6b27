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


// Mini-batch joint training of every modality encoder, the shared head and
// the class centers.
//
// One step: embed each modality of the batch, classify every embedding with
// the shared head, form alpha_c L_c + alpha_d L_d + alpha_m L_m, backprop,
// take a momentum-SGD step on all network weights, then move the centers with
// the explicit center update computed from the same forward pass.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmcl/autodiff.hpp"
#include "cmcl/data.hpp"
#include "cmcl/error.hpp"
#include "cmcl/io.hpp"
#include "cmcl/losses.hpp"
#include "cmcl/model.hpp"

namespace cmcl {

/// splitmix64 of (seed, stream): independent generator seeds from one seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Seed streams.
inline constexpr std::uint64_t kModelStream = 0;
inline constexpr std::uint64_t kCenterStream = 1;
inline constexpr std::uint64_t kBatchStream = 2;

struct TrainConfig {
  std::size_t batch_size = 32;
  std::optional<std::size_t> epochs;  // when set, overrides `iterations`
  std::size_t iterations = 2000;
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.001;
  double lr_decay_factor = 0.1;
  std::size_t lr_decay_every = 20000;
  LossWeights weights;
  double center_lr = 0.5;
  Reduction center_reduction = Reduction::kMean;
  Reduction mse_reduction = Reduction::kMean;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
    if (!(learning_rate > 0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate", "must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum", "must be in [0, 1)");
    if (!(weight_decay >= 0) || !std::isfinite(weight_decay))
      throw ConfigError("weight_decay", "must be >= 0");
    if (!(lr_decay_factor > 0 && lr_decay_factor <= 1))
      throw ConfigError("lr_decay_factor", "must be in (0, 1]");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every", "must be >= 1");
    if (!(center_lr >= 0) || !std::isfinite(center_lr))
      throw ConfigError("center_lr", "must be >= 0");
    weights.validate();
    if (!weights.any_positive()) throw ConfigError("weights", "at least one loss weight must be > 0");
  }

  /// Steps executed for a training set of n instances.
  std::size_t total_steps(std::size_t n) const {
    if (epochs) return *epochs * (n / batch_size);
    return iterations;
  }
};

/// tau * factor^floor(iteration / decay_every).
inline double lr_schedule(std::size_t iteration, const TrainConfig& cfg) {
  const auto drops = static_cast<double>(iteration / cfg.lr_decay_every);
  return cfg.learning_rate * std::pow(cfg.lr_decay_factor, drops);
}

/// Momentum buffers, one per parameter tensor in Model::parameters() order.
template <class T>
struct OptimizerState {
  std::vector<std::vector<T>> velocity;

  static OptimizerState init(Model<T>& model) {
    OptimizerState s;
    for (auto& p : model.parameters()) s.velocity.emplace_back(p.tensor->size(), T(0));
    return s;
  }
};

/// Classical momentum with L2 decay on weights (never biases):
///   v <- momentum * v + g + weight_decay * theta;  theta <- theta - lr * v
template <class T>
void sgd_step(Model<T>& model, OptimizerState<T>& state, double lr, double momentum,
              double weight_decay) {
  auto params = model.parameters();
  if (state.velocity.size() != params.size()) {
    throw ContractError("optimizer state does not match the model's parameters");
  }
  const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), tau = static_cast<T>(lr);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& theta = params[p].tensor->values;
    auto& v = state.velocity[p];
    const auto& g = params[p].tensor->grad;
    const T decay = params[p].is_bias ? T(0) : wd;
    for (std::size_t q = 0; q < theta.size(); ++q) {
      const T grad = (g ? (*g)[q] : T(0)) + decay * theta[q];
      v[q] = mu * v[q] + grad;
      theta[q] -= tau * v[q];
    }
  }
}

/// n_b distinct instance indices drawn uniformly (partial Fisher-Yates).
template <class Rng>
std::vector<std::size_t> sample_minibatch(const Dataset& data, std::size_t batch_size, Rng& rng) {
  const std::size_t n = data.size();
  if (batch_size == 0 || batch_size > n) {
    throw ConfigError("batch_size", "batch size " + std::to_string(batch_size) +
                                        " must be in [1, " + std::to_string(n) + "]");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(batch_size);
  return idx;
}

struct StepMetrics {
  double loss = 0;
  double center = 0;
  double discriminative = 0;
  double pair = 0;
};

/// Forward pass of one batch: per-modality embeddings, log-probabilities and
/// the three loss terms, all on `tape`.
template <class T>
struct BatchForward {
  std::vector<Var<T>> embeddings;
  std::vector<Var<T>> log_probs;
  Var<T> l_c, l_d, l_m, total;
};

template <class T>
BatchForward<T> forward_batch(Tape<T>& tape, const Dataset& data,
                              std::span<const std::size_t> batch,
                              std::span<const std::size_t> labels, Model<T>& model,
                              const CenterBank<T>& bank, const TrainConfig& cfg) {
  BatchForward<T> f;
  std::vector<const Sample*> samples(batch.size());
  for (std::size_t m = 0; m < model.encoders.size(); ++m) {
    for (std::size_t i = 0; i < batch.size(); ++i) samples[i] = &data.instances[batch[i]].samples[m];
    auto& enc = model.encoders[m];
    auto v = encode_batch(tape, bind(tape, enc.net), enc, std::span<const Sample* const>(samples));
    f.embeddings.push_back(v);
    f.log_probs.push_back(classify(v, model.head));
  }
  std::span<const Var<T>> emb(f.embeddings);
  f.l_c = cross_modal_center_loss(emb, labels, bank, cfg.center_reduction);
  f.l_d = discriminative_loss(std::span<const Var<T>>(f.log_probs), labels);
  f.l_m = cross_modal_mse(emb, cfg.mse_reduction);
  f.total = combined_loss(f.l_c, f.l_d, f.l_m, cfg.weights);
  return f;
}

template <class T>
StepMetrics train_step(const Dataset& data, std::span<const std::size_t> batch, Model<T>& model,
                       CenterBank<T>& bank, OptimizerState<T>& opt, const TrainConfig& cfg,
                       double lr) {
  if (data.num_modalities() != model.encoders.size()) {
    throw ShapeError("dataset has " + std::to_string(data.num_modalities()) +
                     " modalities, model has " + std::to_string(model.encoders.size()));
  }
  std::vector<std::size_t> labels(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = data.instances[batch[i]].label;

  model.zero_grad();
  Tape<T> tape;
  auto f = forward_batch(tape, data, batch, std::span<const std::size_t>(labels), model, bank, cfg);
  tape.backward(f.total);
  sgd_step(model, opt, lr, cfg.momentum, cfg.weight_decay);

  auto delta = center_delta(std::span<const Var<T>>(f.embeddings),
                            std::span<const std::size_t>(labels), bank);
  bank.center_lr = static_cast<T>(cfg.center_lr);
  apply_center_update(bank, delta);

  return {static_cast<double>(f.total.item()), static_cast<double>(f.l_c.item()),
          static_cast<double>(f.l_d.item()), static_cast<double>(f.l_m.item())};
}

struct HistoryRow {
  std::size_t iteration = 0;
  double lr = 0;
  StepMetrics metrics;
};

template <class T>
struct TrainResult {
  Model<T> model;
  CenterBank<T> bank;
  std::vector<HistoryRow> history;
};

inline ModelConfig model_config_for(const Dataset& data, std::size_t embed_dim,
                                    std::size_t encoder_hidden, std::size_t head_hidden,
                                    std::uint64_t seed) {
  return {data.modalities, data.num_classes, embed_dim, encoder_hidden, head_hidden,
          derive_seed(seed, kModelStream)};
}

/// Called after every completed epoch (epoch mode only) with the 1-based
/// epoch number.
template <class T>
using EpochCallback = std::function<void(std::size_t, const Model<T>&, const CenterBank<T>&)>;

template <class T>
TrainResult<T> run_training(const Dataset& data, Model<T> model, CenterBank<T> bank,
                            const TrainConfig& cfg, const EpochCallback<T>& on_epoch = {}) {
  cfg.validate();
  if (cfg.batch_size > data.size()) {
    throw ConfigError("batch_size", "batch size " + std::to_string(cfg.batch_size) +
                                        " exceeds the " + std::to_string(data.size()) +
                                        " training instances");
  }
  if (bank.num_classes() != data.num_classes || bank.dim() != model.config.embed_dim) {
    throw ShapeError("center bank " + shape_string(bank.centers.shape) +
                     " does not match the model and dataset");
  }
  TrainResult<T> result{std::move(model), std::move(bank), {}};
  auto opt = OptimizerState<T>::init(result.model);
  std::mt19937_64 rng(derive_seed(cfg.seed, kBatchStream));

  const std::size_t steps = cfg.total_steps(data.size());
  const std::size_t per_epoch = data.size() / cfg.batch_size;
  result.history.reserve(steps);
  for (std::size_t it = 0; it < steps; ++it) {
    const auto batch = sample_minibatch(data, cfg.batch_size, rng);
    const double lr = lr_schedule(it, cfg);
    auto metrics = train_step(data, std::span<const std::size_t>(batch), result.model,
                              result.bank, opt, cfg, lr);
    result.history.push_back({it, lr, metrics});
    if (on_epoch && cfg.epochs && (it + 1) % per_epoch == 0) {
      on_epoch((it + 1) / per_epoch, result.model, result.bank);
    }
  }
  return result;
}

/// Fresh model and centers for `data`, then run_training.
template <class T>
TrainResult<T> train_from_scratch(const Dataset& data, const TrainConfig& cfg,
                                  std::size_t embed_dim = 32, std::size_t encoder_hidden = 128,
                                  std::size_t head_hidden = 64,
                                  const EpochCallback<T>& on_epoch = {}) {
  auto model = Model<T>::init(
      model_config_for(data, embed_dim, encoder_hidden, head_hidden, cfg.seed));
  auto bank = CenterBank<T>::init(data.num_classes, embed_dim, derive_seed(cfg.seed, kCenterStream),
                                  static_cast<T>(cfg.center_lr));
  return run_training(data, std::move(model), std::move(bank), cfg, on_epoch);
}

/// CSV with header iteration,lr,L,L_c,L_d,L_m.
inline std::string history_csv(std::span<const HistoryRow> history) {
  std::string out = "iteration,lr,L,L_c,L_d,L_m\n";
  for (const auto& row : history) {
    out += std::to_string(row.iteration) + ',' + io::format_real(row.lr) + ',' +
           io::format_real(row.metrics.loss) + ',' + io::format_real(row.metrics.center) + ',' +
           io::format_real(row.metrics.discriminative) + ',' + io::format_real(row.metrics.pair) +
           '\n';
  }
  return out;
}

}  // namespace cmcl
