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


// Multi-modal datasets: in-memory representation, a synthetic generator with
// a tunable cross-modal discrepancy, and the on-disk format.
//
// On disk a dataset is a JSON manifest plus one CSV per (modality, split):
//
//   {"format": "cmcl-dataset", "version": 1, "K": 4,
//    "counts": {"train": 200, "test": 100},
//    "modalities": [{"name": "image", "kind": "vector", "dim": 24,
//                    "files": {"train": "image_train.csv", "test": "image_test.csv"}}]}
//
// Vector CSV header:    instance_id,label,f0,...,f{d-1}
// Point-set CSV header: instance_id,label,point_index,f0,...,f{d-1}
// Reals are written with 9 significant digits, which round-trips float32.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cmcl/error.hpp"
#include "cmcl/io.hpp"
#include "cmcl/sample.hpp"

namespace cmcl {

struct Instance {
  std::int64_t id = 0;
  std::size_t label = 0;
  std::vector<Sample> samples;  // one per modality, in modality order

  bool operator==(const Instance&) const = default;
};

struct Dataset {
  std::vector<ModalitySpec> modalities;
  std::size_t num_classes = 0;
  std::vector<Instance> instances;

  std::size_t size() const { return instances.size(); }
  std::size_t num_modalities() const { return modalities.size(); }

  std::size_t modality_index(const std::string& name) const {
    for (std::size_t m = 0; m < modalities.size(); ++m)
      if (modalities[m].name == name) return m;
    std::string valid;
    for (const auto& m : modalities) valid += (valid.empty() ? "" : ", ") + m.name;
    throw ContractError("unknown modality '" + name + "' (valid: " + valid + ")");
  }

  /// Every instance carries all modalities with matching dims and a label < K.
  void validate() const {
    for (const auto& inst : instances) {
      if (inst.label >= num_classes) {
        throw LabelRangeError("label out of range: instance " + std::to_string(inst.id) +
                              " has label " + std::to_string(inst.label) + " but K = " +
                              std::to_string(num_classes));
      }
      if (inst.samples.size() != modalities.size()) {
        throw ContractError("instance " + std::to_string(inst.id) + " has " +
                            std::to_string(inst.samples.size()) + " modality samples, expected " +
                            std::to_string(modalities.size()));
      }
      for (std::size_t m = 0; m < modalities.size(); ++m) {
        const auto& s = inst.samples[m];
        if (s.rows == 0 || s.values.size() != s.rows * modalities[m].dim) {
          throw DimensionError("instance " + std::to_string(inst.id) + " modality '" +
                               modalities[m].name + "' has the wrong dimension");
        }
      }
    }
  }

  bool operator==(const Dataset&) const = default;
};

struct SplitDataset {
  Dataset train;
  Dataset test;
  bool operator==(const SplitDataset&) const = default;
};

struct GeneratorConfig {
  std::size_t num_classes = 4;
  std::size_t n_train = 200;
  std::size_t n_test = 100;
  std::size_t latent_dim = 8;
  std::vector<ModalitySpec> modalities;
  std::size_t points_per_set = 8;  // point-set modalities only
  double noise_sigma = 0.05;
  double nuisance_strength = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw ConfigError("num_classes", "need at least 2 classes");
    if (n_train == 0) throw ConfigError("n_train", "must be positive");
    if (latent_dim == 0) throw ConfigError("latent_dim", "must be positive");
    if (modalities.empty()) throw ConfigError("modalities", "at least one modality is required");
    for (const auto& m : modalities) {
      if (m.name.empty()) throw ConfigError("modalities", "modality name is empty");
      if (m.dim == 0) throw ConfigError("modalities", "modality '" + m.name + "' has dim 0");
    }
    for (std::size_t a = 0; a < modalities.size(); ++a)
      for (std::size_t b = a + 1; b < modalities.size(); ++b)
        if (modalities[a].name == modalities[b].name)
          throw ConfigError("modalities", "duplicate modality name '" + modalities[a].name + "'");
    if (points_per_set == 0) throw ConfigError("points_per_set", "must be positive");
    if (!(noise_sigma >= 0) || !std::isfinite(noise_sigma))
      throw ConfigError("noise_sigma", "must be finite and >= 0");
    if (!(nuisance_strength >= 0) || !std::isfinite(nuisance_strength))
      throw ConfigError("nuisance_strength", "must be finite and >= 0");
  }
};

/// Draws one latent prototype per class and, per modality, a random linear
/// map A, offset b and unit nuisance direction u. A sample of class y is
///   A p_y + b + nuisance_strength * eta * u + noise_sigma * eps
/// with eta a scalar drawn per (instance, modality). Point sets add a fixed
/// per-modality offset to each point, so with zero noise every point set of a
/// class is identical. Labels cycle through the classes; train ids come
/// first, test ids continue after them.
inline SplitDataset generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t h = cfg.latent_dim, K = cfg.num_classes;

  std::vector<std::vector<double>> prototypes(K, std::vector<double>(h));
  for (auto& p : prototypes)
    for (auto& x : p) x = normal(rng);

  struct ModalityMap {
    std::vector<double> a;        // d x h
    std::vector<double> b;        // d
    std::vector<double> u;        // d, unit norm
    std::vector<double> offsets;  // points_per_set x d
  };
  std::vector<ModalityMap> maps;
  for (const auto& spec : cfg.modalities) {
    const std::size_t d = spec.dim;
    ModalityMap mm{std::vector<double>(d * h), std::vector<double>(d), std::vector<double>(d), {}};
    const double s = 1.0 / std::sqrt(static_cast<double>(h));
    for (auto& x : mm.a) x = s * normal(rng);
    for (auto& x : mm.b) x = normal(rng);
    double norm = 0;
    for (auto& x : mm.u) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : mm.u) x /= norm;
    if (spec.kind == ModalityKind::kPointSet) {
      mm.offsets.resize(cfg.points_per_set * d);
      for (auto& x : mm.offsets) x = 0.5 * normal(rng);
    }
    maps.push_back(std::move(mm));
  }

  auto make_split = [&](std::size_t count, std::int64_t first_id) {
    Dataset ds;
    ds.modalities = cfg.modalities;
    ds.num_classes = K;
    for (std::size_t i = 0; i < count; ++i) {
      Instance inst;
      inst.id = first_id + static_cast<std::int64_t>(i);
      inst.label = i % K;
      const auto& p = prototypes[inst.label];
      for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
        const auto& spec = cfg.modalities[m];
        const auto& mm = maps[m];
        const std::size_t d = spec.dim;
        const double eta = normal(rng);
        std::vector<double> base(d);
        for (std::size_t r = 0; r < d; ++r) {
          double v = mm.b[r] + cfg.nuisance_strength * eta * mm.u[r];
          for (std::size_t c = 0; c < h; ++c) v += mm.a[r * h + c] * p[c];
          base[r] = v;
        }
        Sample sample;
        sample.rows = spec.kind == ModalityKind::kPointSet ? cfg.points_per_set : 1;
        sample.values.reserve(sample.rows * d);
        for (std::size_t pt = 0; pt < sample.rows; ++pt)
          for (std::size_t r = 0; r < d; ++r) {
            double v = base[r] + cfg.noise_sigma * normal(rng);
            if (!mm.offsets.empty()) v += mm.offsets[pt * d + r];
            sample.values.push_back(static_cast<float>(v));
          }
        inst.samples.push_back(std::move(sample));
      }
      ds.instances.push_back(std::move(inst));
    }
    return ds;
  };

  SplitDataset out;
  out.train = make_split(cfg.n_train, 0);
  out.test = make_split(cfg.n_test, static_cast<std::int64_t>(cfg.n_train));
  return out;
}

namespace detail {

inline std::string modality_csv(const Dataset& ds, std::size_t m) {
  const auto& spec = ds.modalities[m];
  const bool set = spec.kind == ModalityKind::kPointSet;
  std::string out = set ? "instance_id,label,point_index" : "instance_id,label";
  for (std::size_t j = 0; j < spec.dim; ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (const auto& inst : ds.instances) {
    const auto& s = inst.samples[m];
    for (std::size_t r = 0; r < s.rows; ++r) {
      out += std::to_string(inst.id) + ',' + std::to_string(inst.label);
      if (set) out += ',' + std::to_string(r);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        out += ',';
        out += io::format_real(s.values[r * spec.dim + j], 9);
      }
      out += '\n';
    }
  }
  return out;
}

struct CsvRecord {
  std::int64_t id;
  std::int64_t label;
  std::vector<float> features;
};

inline std::vector<CsvRecord> read_modality_csv(const std::string& path, const ModalitySpec& spec) {
  if (!std::filesystem::exists(path)) {
    throw MissingFileError("missing modality file: " + path + " (modality '" + spec.name + "')");
  }
  const std::string text = io::read_file(path);
  const bool set = spec.kind == ModalityKind::kPointSet;
  const std::size_t lead = set ? 3 : 2;
  std::vector<CsvRecord> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::int64_t prev_id = 0;
  std::size_t next_point = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = io::split(line, ',');
    if (fields.size() != lead + spec.dim) {
      throw DimensionError(path + ":" + std::to_string(line_no) + ": expected " +
                           std::to_string(spec.dim) + " features for modality '" + spec.name +
                           "', got " + std::to_string(fields.size() >= lead ? fields.size() - lead : 0));
    }
    if (line_no == 1) {
      if (fields[0] != "instance_id" || fields[1] != "label" ||
          (set && fields[2] != "point_index")) {
        throw FormatError(path + ": unexpected CSV header");
      }
      continue;
    }
    try {
      CsvRecord rec{io::parse_int<std::int64_t>(fields[0]), io::parse_int<std::int64_t>(fields[1]),
                    {}};
      if (set) {
        const auto pt = io::parse_int<std::size_t>(fields[2]);
        const bool continues = !out.empty() && rec.id == prev_id;
        if (!continues) next_point = 0;
        if (pt != next_point) {
          throw FormatError("point_index " + std::to_string(pt) + " out of sequence");
        }
        ++next_point;
      }
      rec.features.reserve(spec.dim);
      for (std::size_t j = lead; j < fields.size(); ++j)
        rec.features.push_back(io::parse_real<float>(fields[j]));
      prev_id = rec.id;
      out.push_back(std::move(rec));
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline Dataset load_split(const std::filesystem::path& base, const nlohmann::json& manifest,
                          const std::string& split) {
  Dataset ds;
  ds.num_classes = manifest.at("K").get<std::size_t>();
  const auto count = manifest.at("counts").at(split).get<std::size_t>();
  const auto& mods = manifest.at("modalities");
  for (const auto& m : mods) {
    ds.modalities.push_back({m.at("name").get<std::string>(),
                             parse_modality_kind(m.at("kind").get<std::string>()),
                             m.at("dim").get<std::size_t>()});
    if (ds.modalities.back().dim == 0) throw DimensionError("modality dim must be positive");
  }
  for (std::size_t m = 0; m < ds.modalities.size(); ++m) {
    const auto& spec = ds.modalities[m];
    const auto file = (base / mods[m].at("files").at(split).get<std::string>()).string();
    auto records = read_modality_csv(file, spec);

    // Group consecutive rows by instance id (point sets span several rows).
    std::vector<Instance> grouped;
    for (auto& rec : records) {
      if (rec.label < 0 || static_cast<std::size_t>(rec.label) >= ds.num_classes) {
        throw LabelRangeError("label out of range: " + file + " instance " +
                              std::to_string(rec.id) + " has label " + std::to_string(rec.label) +
                              " but K = " + std::to_string(ds.num_classes));
      }
      const bool continues = spec.kind == ModalityKind::kPointSet && !grouped.empty() &&
                             grouped.back().id == rec.id;
      if (!continues) {
        grouped.push_back({rec.id, static_cast<std::size_t>(rec.label), {Sample{0, {}}}});
      } else if (grouped.back().label != static_cast<std::size_t>(rec.label)) {
        throw FormatError(file + ": instance " + std::to_string(rec.id) + " changes label");
      }
      auto& s = grouped.back().samples[0];
      s.rows += 1;
      s.values.insert(s.values.end(), rec.features.begin(), rec.features.end());
    }
    if (grouped.size() != count) {
      throw RowCountError("row count mismatch: " + file + " holds " +
                          std::to_string(grouped.size()) + " instances, manifest says " +
                          std::to_string(count));
    }
    if (m == 0) {
      ds.instances = std::move(grouped);
      continue;
    }
    for (std::size_t i = 0; i < count; ++i) {
      if (grouped[i].id != ds.instances[i].id || grouped[i].label != ds.instances[i].label) {
        throw FormatError(file + ": row " + std::to_string(i) + " (instance " +
                          std::to_string(grouped[i].id) + ") does not line up with modality '" +
                          ds.modalities[0].name + "'");
      }
      ds.instances[i].samples.push_back(std::move(grouped[i].samples[0]));
    }
  }
  ds.validate();
  return ds;
}

}  // namespace detail

/// Writes `<dir>/manifest.json` and one CSV per (modality, split). Returns the
/// manifest path.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                           const SplitDataset& data) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "cmcl-dataset";
  manifest["version"] = 1;
  manifest["K"] = data.train.num_classes;
  manifest["counts"] = {{"train", data.train.size()}, {"test", data.test.size()}};
  manifest["modalities"] = nlohmann::json::array();
  for (std::size_t m = 0; m < data.train.modalities.size(); ++m) {
    const auto& spec = data.train.modalities[m];
    const std::string train_file = spec.name + "_train.csv";
    const std::string test_file = spec.name + "_test.csv";
    io::write_file((dir / train_file).string(), detail::modality_csv(data.train, m));
    io::write_file((dir / test_file).string(), detail::modality_csv(data.test, m));
    manifest["modalities"].push_back({{"name", spec.name},
                                      {"kind", std::string(to_string(spec.kind))},
                                      {"dim", spec.dim},
                                      {"files", {{"train", train_file}, {"test", test_file}}}});
  }
  const auto path = dir / "manifest.json";
  io::write_file(path.string(), manifest.dump(2) + "\n");
  return path;
}

/// Reads both splits named by a manifest. Failures surface as the DataError
/// subclasses (MissingFileError, RowCountError, LabelRangeError,
/// DimensionError, FormatError).
inline SplitDataset load_dataset(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path)) {
    throw MissingFileError("missing manifest: " + manifest_path.string());
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(manifest_path.string()));
    const auto base = manifest_path.parent_path();
    SplitDataset out{detail::load_split(base, manifest, "train"),
                     detail::load_split(base, manifest, "test")};
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
}

}  // namespace cmcl
