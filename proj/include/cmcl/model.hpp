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


// Per-modality encoders into a common embedding space and the classifier head
// shared by every modality.
//
// Each encoder is a two-layer perceptron (input -> hidden -> embed, ReLU in
// between). Point-set modalities run the same perceptron on every point and
// take a coordinate-wise max over points, which makes the embedding
// independent of point order. The head maps an embedding to log-probabilities
// over the classes through two fully connected layers with a ReLU between.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmcl/autodiff.hpp"
#include "cmcl/error.hpp"
#include "cmcl/sample.hpp"
#include "cmcl/tensor.hpp"

namespace cmcl {

struct ModelConfig {
  std::vector<ModalitySpec> modalities;
  std::size_t num_classes = 0;
  std::size_t embed_dim = 32;
  std::size_t encoder_hidden = 128;
  std::size_t head_hidden = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (modalities.empty()) throw ConfigError("modalities", "at least one modality is required");
    for (const auto& m : modalities) {
      if (m.name.empty()) throw ConfigError("modalities", "modality name is empty");
      if (m.dim == 0) throw ConfigError("modalities", "modality '" + m.name + "' has dim 0");
    }
    if (num_classes < 2) throw ConfigError("num_classes", "need at least 2 classes");
    if (embed_dim == 0) throw ConfigError("embed_dim", "must be positive");
    if (encoder_hidden == 0) throw ConfigError("encoder_hidden", "must be positive");
    if (head_hidden == 0) throw ConfigError("head_hidden", "must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Fully connected layer; weight is [in x out], bias is [out].
template <class T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const T limit = std::sqrt(T(6) / static_cast<T>(in));
    std::uniform_real_distribution<T> dist(-limit, limit);
    std::vector<T> w(in * out);
    for (auto& x : w) x = dist(rng);
    return {Tensor<T>({in, out}, std::move(w), true), Tensor<T>::zeros({out}, true)};
  }
};

template <class T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;
};

template <class T>
struct EncoderParams {
  std::size_t modality = 0;
  ModalitySpec spec;
  Mlp<T> net;
};

template <class T>
struct SharedHeadParams {
  Mlp<T> net;
};

/// Non-owning view of one trainable tensor.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  bool is_bias;
};

template <class T>
struct Model {
  ModelConfig config;
  std::vector<EncoderParams<T>> encoders;
  SharedHeadParams<T> head;

  /// Fan-in scaled uniform weights, zero biases. Layers are drawn in a fixed
  /// order (encoders by modality, then the head) from one seeded stream.
  static Model init(const ModelConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    Model m;
    m.config = cfg;
    for (std::size_t i = 0; i < cfg.modalities.size(); ++i) {
      const auto& spec = cfg.modalities[i];
      auto fc1 = Linear<T>::init(spec.dim, cfg.encoder_hidden, rng);
      auto fc2 = Linear<T>::init(cfg.encoder_hidden, cfg.embed_dim, rng);
      m.encoders.push_back({i, spec, {std::move(fc1), std::move(fc2)}});
    }
    auto h1 = Linear<T>::init(cfg.embed_dim, cfg.head_hidden, rng);
    auto h2 = Linear<T>::init(cfg.head_hidden, cfg.num_classes, rng);
    m.head = {{std::move(h1), std::move(h2)}};
    return m;
  }

  /// Every trainable tensor, keyed "<modality>/<layer>/<weight|bias>" and
  /// "head/<layer>/<weight|bias>".
  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    auto add = [&out](const std::string& prefix, Mlp<T>& net) {
      out.push_back({prefix + "/fc1/weight", &net.fc1.weight, false});
      out.push_back({prefix + "/fc1/bias", &net.fc1.bias, true});
      out.push_back({prefix + "/fc2/weight", &net.fc2.weight, false});
      out.push_back({prefix + "/fc2/bias", &net.fc2.bias, true});
    };
    for (auto& e : encoders) add(e.spec.name, e.net);
    add("head", head.net);
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor->zero_grad();
  }
};

/// An Mlp's tensors placed on a tape, either as trainable parameters or as
/// frozen constants.
template <class T>
struct BoundMlp {
  Var<T> w1, b1, w2, b2;
};

template <class T>
BoundMlp<T> bind(Tape<T>& tape, Mlp<T>& net) {
  return {tape.parameter(net.fc1.weight), tape.parameter(net.fc1.bias),
          tape.parameter(net.fc2.weight), tape.parameter(net.fc2.bias)};
}

template <class T>
BoundMlp<T> bind_frozen(Tape<T>& tape, const Mlp<T>& net) {
  auto c = [&tape](const Tensor<T>& t) { return tape.constant(Tensor<T>(t.shape, t.values)); };
  return {c(net.fc1.weight), c(net.fc1.bias), c(net.fc2.weight), c(net.fc2.bias)};
}

template <class T>
Var<T> forward(const BoundMlp<T>& net, const Var<T>& x) {
  auto h = relu(add_bias(matmul(x, net.w1), net.b1));
  return add_bias(matmul(h, net.w2), net.b2);
}

/// Embeds a batch of samples of one modality; returns [batch x embed_dim].
template <class T>
Var<T> encode_batch(Tape<T>& tape, const BoundMlp<T>& net, const EncoderParams<T>& enc,
                    std::span<const Sample* const> samples) {
  if (samples.empty()) throw ContractError("encode: empty batch for modality " + enc.spec.name);
  const std::size_t d = enc.spec.dim;
  std::size_t total_rows = 0;
  for (const Sample* s : samples) {
    if (s->rows == 0 || s->values.empty()) {
      throw ContractError("encode: empty point set for modality " + enc.spec.name);
    }
    if (s->values.size() != s->rows * d) {
      throw ShapeError("encode: modality " + std::to_string(enc.modality) + " ('" +
                       enc.spec.name + "') expects dim " + std::to_string(d) + ", got " +
                       std::to_string(s->values.size() / s->rows));
    }
    if (enc.spec.kind == ModalityKind::kVector && s->rows != 1) {
      throw ShapeError("encode: modality '" + enc.spec.name + "' is a vector modality but got " +
                       std::to_string(s->rows) + " rows");
    }
    total_rows += s->rows;
  }
  std::vector<T> x;
  x.reserve(total_rows * d);
  std::vector<std::size_t> offsets{0};
  for (const Sample* s : samples) {
    for (float v : s->values) x.push_back(static_cast<T>(v));
    offsets.push_back(offsets.back() + s->rows);
  }
  auto input = tape.constant(Tensor<T>({total_rows, d}, std::move(x)));
  auto per_row = forward(net, input);
  if (enc.spec.kind == ModalityKind::kVector) return per_row;
  return segment_max(per_row, std::span<const std::size_t>(offsets));
}

/// Embedding of a single sample with trainable parameters; shape [1 x k].
template <class T>
Var<T> encode(Tape<T>& tape, const Sample& sample, EncoderParams<T>& enc) {
  const Sample* one[] = {&sample};
  return encode_batch(tape, bind(tape, enc.net), enc, std::span<const Sample* const>(one));
}

/// Point-set embedding: per-point perceptron, then max over points.
template <class T>
Var<T> encode_set(Tape<T>& tape, const Sample& points, EncoderParams<T>& enc) {
  if (enc.spec.kind != ModalityKind::kPointSet) {
    throw ContractError("encode_set: modality '" + enc.spec.name + "' is not a point-set modality");
  }
  if (points.rows == 0 || points.values.empty()) {
    throw ContractError("encode_set: empty point set");
  }
  return encode(tape, points, enc);
}

/// Frozen-parameter embedding of a batch; row-major [batch x k] values.
template <class T>
std::vector<T> embed_batch(std::span<const Sample* const> samples, const EncoderParams<T>& enc) {
  Tape<T> tape;
  return encode_batch(tape, bind_frozen(tape, enc.net), enc, samples).value().values;
}

template <class T>
std::vector<T> embed(const Sample& sample, const EncoderParams<T>& enc) {
  const Sample* one[] = {&sample};
  return embed_batch(std::span<const Sample* const>(one), enc);
}

/// Log-probabilities [n x K] for embeddings v [n x k] through the shared head.
template <class T>
Var<T> classify(const Var<T>& v, SharedHeadParams<T>& head) {
  return log_softmax(forward(bind(*v.tape(), head.net), v));
}

template <class T>
Var<T> classify_frozen(const Var<T>& v, const SharedHeadParams<T>& head) {
  return log_softmax(forward(bind_frozen(*v.tape(), head.net), v));
}

}  // namespace cmcl
