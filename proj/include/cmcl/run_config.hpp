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


#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmcl/data.hpp"
#include "cmcl/error.hpp"
#include "cmcl/io.hpp"
#include "cmcl/losses.hpp"
#include "cmcl/train.hpp"

namespace cmcl {

/// Value type of one configuration key.
enum class KeyKind { kUInt, kOptUInt, kOptInt, kReal, kBool, kString, kModalities };

/// Subcommands that expose a key as a flag.
enum Command : unsigned {
  kGenData = 1u << 0,
  kTrain = 1u << 1,
  kEmbed = 1u << 2,
  kEval = 1u << 3,
  kRetrieve = 1u << 4,
  kAllCommands = 0x1f,
};

struct ConfigKey {
  std::string name;
  KeyKind kind;
  nlohmann::json fallback;
  unsigned commands;
  std::string help;
};

inline const std::vector<ConfigKey>& config_schema() {
  using nlohmann::json;
  constexpr unsigned kModelUsers = kTrain | kEmbed | kEval | kRetrieve;
  constexpr unsigned kReaders = kEmbed | kEval | kRetrieve;
  static const std::vector<ConfigKey> keys = {
      {"seed", KeyKind::kUInt, 0, kGenData | kTrain, "master seed"},
      {"num_classes", KeyKind::kUInt, 4, kGenData, "classes K"},
      {"n_train", KeyKind::kUInt, 200, kGenData, "training instances"},
      {"n_test", KeyKind::kUInt, 100, kGenData, "test instances"},
      {"latent_dim", KeyKind::kUInt, 8, kGenData, "class prototype dimension"},
      {"points_per_set", KeyKind::kUInt, 8, kGenData, "points per point-set sample"},
      {"noise_sigma", KeyKind::kReal, 0.05, kGenData, "per-feature Gaussian noise"},
      {"nuisance_strength", KeyKind::kReal, 1.0, kGenData,
       "scale of the per-modality nuisance direction"},
      {"modalities", KeyKind::kModalities,
       json::array({{{"name", "image"}, {"kind", "vector"}, {"dim", 24}},
                    {{"name", "mesh"}, {"kind", "vector"}, {"dim", 16}},
                    {{"name", "points"}, {"kind", "point-set"}, {"dim", 3}}}),
       kGenData, "name:kind:dim list, e.g. image:vector:24,points:point-set:3"},
      {"embed_dim", KeyKind::kUInt, 32, kTrain, "common space dimension k"},
      {"encoder_hidden", KeyKind::kUInt, 128, kTrain, "encoder hidden width"},
      {"head_hidden", KeyKind::kUInt, 64, kTrain, "shared head hidden width"},
      {"batch_size", KeyKind::kUInt, 32, kTrain, "minibatch size"},
      {"epochs", KeyKind::kOptUInt, nullptr, kTrain, "epoch budget (overrides iterations)"},
      {"iterations", KeyKind::kUInt, 2000, kTrain, "iteration budget"},
      {"learning_rate", KeyKind::kReal, 0.001, kTrain, "initial learning rate"},
      {"momentum", KeyKind::kReal, 0.9, kTrain, "SGD momentum"},
      {"weight_decay", KeyKind::kReal, 0.001, kTrain, "L2 penalty on weights"},
      {"lr_decay_factor", KeyKind::kReal, 0.1, kTrain, "step decay factor"},
      {"lr_decay_every", KeyKind::kUInt, 20000, kTrain, "iterations between decays"},
      {"alpha_c", KeyKind::kReal, 1.0, kTrain, "center loss weight"},
      {"alpha_d", KeyKind::kReal, 1.0, kTrain, "cross-entropy weight"},
      {"alpha_m", KeyKind::kReal, 0.1, kTrain, "pairwise MSE weight"},
      {"loss", KeyKind::kString, "l1+l2+l3", kTrain, "l1 | l1+l2 | l1+l2+l3"},
      {"center_lr", KeyKind::kReal, 0.5, kTrain, "center update step"},
      {"center_reduction", KeyKind::kString, "mean", kTrain, "sum | mean"},
      {"mse_reduction", KeyKind::kString, "mean", kTrain, "sum | mean"},
      {"precision", KeyKind::kString, "float32", kModelUsers, "float32 | float64"},
      {"dataset", KeyKind::kString, "", kModelUsers, "dataset manifest or directory"},
      {"checkpoint", KeyKind::kString, "", kReaders, "checkpoint file"},
      {"split", KeyKind::kString, "test", kReaders, "train | test"},
      {"normalize", KeyKind::kBool, true, kReaders, "L2-normalize embeddings"},
      {"R", KeyKind::kUInt, 0, kEval, "retrieved items per query, 0 = whole gallery"},
      {"query_id", KeyKind::kOptInt, nullptr, kRetrieve, "query instance id"},
      {"source", KeyKind::kString, "", kRetrieve, "query modality"},
      {"target", KeyKind::kString, "", kRetrieve, "gallery modality"},
      {"top_n", KeyKind::kUInt, 10, kRetrieve, "rows to return"},
      {"out_dir", KeyKind::kString, ".", kAllCommands, "output directory"},
  };
  return keys;
}

inline const ConfigKey& config_key(const std::string& name) {
  for (const auto& k : config_schema())
    if (k.name == name) return k;
  throw ConfigError(name, "unknown config key");
}

namespace detail {

inline nlohmann::json checked_value(const ConfigKey& key, const nlohmann::json& v) {
  auto bad = [&](const char* want) { return ConfigError(key.name, std::string("expected ") + want); };
  switch (key.kind) {
    case KeyKind::kOptUInt:
      if (v.is_null()) return v;
      [[fallthrough]];
    case KeyKind::kUInt:
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw bad("a non-negative integer");
      return v;
    case KeyKind::kOptInt:
      if (!v.is_null() && !v.is_number_integer()) throw bad("an integer");
      return v;
    case KeyKind::kReal:
      if (!v.is_number()) throw bad("a number");
      return v;
    case KeyKind::kBool:
      if (!v.is_boolean()) throw bad("true or false");
      return v;
    case KeyKind::kString:
      if (!v.is_string()) throw bad("a string");
      return v;
    case KeyKind::kModalities: {
      if (!v.is_array()) throw bad("a list of {name, kind, dim}");
      for (const auto& m : v) {
        if (!m.is_object() || !m.contains("name") || !m.contains("kind") || !m.contains("dim") ||
            m.size() != 3 || !m["name"].is_string() || !m["kind"].is_string() ||
            !m["dim"].is_number_unsigned())
          throw bad("a list of {name, kind, dim}");
        try {
          (void)parse_modality_kind(m["kind"].get<std::string>());
        } catch (const Error& e) {
          throw ConfigError(key.name, e.what());
        }
      }
      return v;
    }
  }
  return v;
}

}  // namespace detail

/// Converts a command-line string to the key's JSON value.
inline nlohmann::json parse_flag_value(const std::string& name, const std::string& text) {
  const auto& key = config_key(name);
  try {
    switch (key.kind) {
      case KeyKind::kOptUInt:
        if (text == "none") return nullptr;
        [[fallthrough]];
      case KeyKind::kUInt:
        return io::parse_int<std::uint64_t>(text);
      case KeyKind::kOptInt:
        return io::parse_int<std::int64_t>(text);
      case KeyKind::kReal:
        return io::parse_real<double>(text);
      case KeyKind::kBool:
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw ConfigError(name, "expected true or false, got '" + text + "'");
      case KeyKind::kString:
        return text;
      case KeyKind::kModalities: {
        auto out = nlohmann::json::array();
        for (const auto& item : io::split(text, ',')) {
          auto parts = io::split(item, ':');
          if (parts.size() != 3) throw ConfigError(name, "expected name:kind:dim, got '" + std::string(item) + "'");
          out.push_back({{"name", std::string(parts[0])},
                         {"kind", std::string(parts[1])},
                         {"dim", io::parse_int<std::uint64_t>(parts[2])}});
        }
        return detail::checked_value(key, out);
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(name, "cannot parse '" + text + "': " + e.what());
  }
  return text;
}

/// Resolved configuration: defaults, then the file, then flag overrides.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_schema()) values_[k.name] = k.fallback;
  }

  void merge(const nlohmann::json& obj, const std::string& origin) {
    if (!obj.is_object()) throw ConfigError("", origin + ": top level must be a JSON object");
    for (const auto& [name, v] : obj.items()) set(name, v);
  }

  void merge_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingFileError("missing config file: " + path.string());
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(io::read_file(path.string()));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("", "malformed config " + path.string() + ": " + e.what());
    }
    merge(obj, path.string());
  }

  void set(const std::string& name, const nlohmann::json& v) {
    values_[name] = detail::checked_value(config_key(name), v);
  }

  const nlohmann::json& json() const { return values_; }

  std::uint64_t uint(const std::string& k) const { return values_.at(k).get<std::uint64_t>(); }
  double real(const std::string& k) const { return values_.at(k).get<double>(); }
  bool flag(const std::string& k) const { return values_.at(k).get<bool>(); }
  std::string str(const std::string& k) const { return values_.at(k).get<std::string>(); }

  std::string required(const std::string& k) const {
    auto s = str(k);
    if (s.empty()) throw ConfigError(k, "required");
    return s;
  }

  std::vector<ModalitySpec> modalities() const {
    std::vector<ModalitySpec> out;
    for (const auto& m : values_.at("modalities"))
      out.push_back({m["name"].get<std::string>(), parse_modality_kind(m["kind"].get<std::string>()),
                     m["dim"].get<std::size_t>()});
    return out;
  }

  GeneratorConfig generator() const {
    GeneratorConfig g;
    g.num_classes = uint("num_classes");
    g.n_train = uint("n_train");
    g.n_test = uint("n_test");
    g.latent_dim = uint("latent_dim");
    g.modalities = modalities();
    g.points_per_set = uint("points_per_set");
    g.noise_sigma = real("noise_sigma");
    g.nuisance_strength = real("nuisance_strength");
    g.seed = uint("seed");
    g.validate();
    return g;
  }

  TrainConfig train() const {
    TrainConfig c;
    c.batch_size = uint("batch_size");
    if (!values_.at("epochs").is_null()) c.epochs = uint("epochs");
    c.iterations = uint("iterations");
    c.learning_rate = real("learning_rate");
    c.momentum = real("momentum");
    c.weight_decay = real("weight_decay");
    c.lr_decay_factor = real("lr_decay_factor");
    c.lr_decay_every = uint("lr_decay_every");
    c.weights = {real("alpha_c"), real("alpha_d"), real("alpha_m")};
    c.weights = apply_loss_preset(c.weights, str("loss"));
    c.center_lr = real("center_lr");
    c.center_reduction = reduction("center_reduction");
    c.mse_reduction = reduction("mse_reduction");
    c.seed = uint("seed");
    c.validate();
    return c;
  }

  /// True for float64.
  bool double_precision() const {
    const auto p = str("precision");
    if (p == "float64") return true;
    if (p == "float32") return false;
    throw ConfigError("precision", "expected float32 or float64, got '" + p + "'");
  }

  bool test_split() const {
    const auto s = str("split");
    if (s == "test") return true;
    if (s == "train") return false;
    throw ConfigError("split", "expected train or test, got '" + s + "'");
  }

  /// Accepts a manifest path or the directory holding manifest.json.
  std::filesystem::path manifest_path() const {
    std::filesystem::path p = required("dataset");
    if (std::filesystem::is_directory(p)) p /= "manifest.json";
    return p;
  }

  /// l1 keeps only cross-entropy, l1+l2 adds the center loss, l1+l2+l3 adds
  /// the pairwise MSE.
  static LossWeights apply_loss_preset(LossWeights w, const std::string& preset) {
    if (preset == "l1") {
      w.alpha_c = 0;
      w.alpha_m = 0;
    } else if (preset == "l1+l2") {
      w.alpha_m = 0;
    } else if (preset != "l1+l2+l3") {
      throw ConfigError("loss", "expected l1, l1+l2 or l1+l2+l3, got '" + preset + "'");
    }
    return w;
  }

 private:
  Reduction reduction(const std::string& k) const {
    try {
      return parse_reduction(str(k));
    } catch (const Error& e) {
      throw ConfigError(k, e.what());
    }
  }

  nlohmann::json values_ = nlohmann::json::object();
};

}  // namespace cmcl
