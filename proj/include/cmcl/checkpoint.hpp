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


// Text containers for model parameters and class centers.
//
// Checkpoint layout (LF line endings, whitespace separated):
//
//   cmcl-checkpoint 1
//   seed <u64>
//   num_classes <K>
//   embed_dim <k>
//   encoder_hidden <h>
//   head_hidden <hh>
//   modalities <M>
//   modality <name> <vector|point-set> <dim>        (M lines)
//   tensor <key> <rank> <d0> [<d1>]                 (one block per tensor)
//   <values of one row per line>
//   end
//
// Keys are "<modality>/<fc1|fc2>/<weight|bias>" and "head/<fc1|fc2>/<weight|bias>".
// Values use the shortest decimal form that round-trips the stored precision.
//
// Center files hold one class per line, its k coordinates separated by spaces.

#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cmcl/error.hpp"
#include "cmcl/io.hpp"
#include "cmcl/losses.hpp"
#include "cmcl/model.hpp"

namespace cmcl {

namespace detail {

template <class T>
void write_rows(std::string& out, const Tensor<T>& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) {
      if (c) out += ' ';
      out += io::format_real(t.values[r * t.cols() + c]);
    }
    out += '\n';
  }
}

inline std::string next_token(std::istringstream& in, const std::string& what) {
  std::string tok;
  if (!(in >> tok)) throw FormatError("checkpoint truncated while reading " + what);
  return tok;
}

inline void expect_token(std::istringstream& in, const std::string& want) {
  auto tok = next_token(in, want);
  if (tok != want) throw FormatError("checkpoint: expected '" + want + "', found '" + tok + "'");
}

template <class Int>
Int next_int(std::istringstream& in, const std::string& what) {
  return io::parse_int<Int>(next_token(in, what));
}

}  // namespace detail

template <class T>
std::string checkpoint_text(const Model<T>& model) {
  const auto& c = model.config;
  std::string out = "cmcl-checkpoint 1\n";
  out += "seed " + std::to_string(c.seed) + '\n';
  out += "num_classes " + std::to_string(c.num_classes) + '\n';
  out += "embed_dim " + std::to_string(c.embed_dim) + '\n';
  out += "encoder_hidden " + std::to_string(c.encoder_hidden) + '\n';
  out += "head_hidden " + std::to_string(c.head_hidden) + '\n';
  out += "modalities " + std::to_string(c.modalities.size()) + '\n';
  for (const auto& m : c.modalities) {
    out += "modality " + m.name + ' ' + std::string(to_string(m.kind)) + ' ' +
           std::to_string(m.dim) + '\n';
  }
  for (const auto& p : const_cast<Model<T>&>(model).parameters()) {
    out += "tensor " + p.name + ' ' + std::to_string(p.tensor->shape.size());
    for (auto d : p.tensor->shape) out += ' ' + std::to_string(d);
    out += '\n';
    detail::write_rows(out, *p.tensor);
  }
  out += "end\n";
  return out;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model) {
  io::write_file(path.string(), checkpoint_text(model));
}

template <class T>
Model<T> parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  detail::expect_token(in, "cmcl-checkpoint");
  if (detail::next_int<int>(in, "version") != 1) throw FormatError("unsupported checkpoint version");
  ModelConfig cfg;
  detail::expect_token(in, "seed");
  cfg.seed = detail::next_int<std::uint64_t>(in, "seed");
  detail::expect_token(in, "num_classes");
  cfg.num_classes = detail::next_int<std::size_t>(in, "num_classes");
  detail::expect_token(in, "embed_dim");
  cfg.embed_dim = detail::next_int<std::size_t>(in, "embed_dim");
  detail::expect_token(in, "encoder_hidden");
  cfg.encoder_hidden = detail::next_int<std::size_t>(in, "encoder_hidden");
  detail::expect_token(in, "head_hidden");
  cfg.head_hidden = detail::next_int<std::size_t>(in, "head_hidden");
  detail::expect_token(in, "modalities");
  const auto M = detail::next_int<std::size_t>(in, "modalities");
  for (std::size_t m = 0; m < M; ++m) {
    detail::expect_token(in, "modality");
    ModalitySpec spec;
    spec.name = detail::next_token(in, "modality name");
    spec.kind = parse_modality_kind(detail::next_token(in, "modality kind"));
    spec.dim = detail::next_int<std::size_t>(in, "modality dim");
    cfg.modalities.push_back(spec);
  }
  // Structure comes from the config; every tensor is then overwritten.
  auto model = Model<T>::init(cfg);
  std::map<std::string, Tensor<T>*> by_name;
  for (auto& p : model.parameters()) by_name[p.name] = p.tensor;
  std::size_t filled = 0;
  while (true) {
    auto tok = detail::next_token(in, "tensor header");
    if (tok == "end") break;
    if (tok != "tensor") throw FormatError("checkpoint: expected 'tensor', found '" + tok + "'");
    auto key = detail::next_token(in, "tensor key");
    auto it = by_name.find(key);
    if (it == by_name.end()) throw FormatError("checkpoint: unknown tensor key '" + key + "'");
    const auto rank = detail::next_int<std::size_t>(in, key);
    Shape shape(rank);
    for (auto& d : shape) d = detail::next_int<std::size_t>(in, key);
    if (shape != it->second->shape) {
      throw ShapeError("checkpoint: tensor '" + key + "' has shape " + shape_string(shape) +
                       ", expected " + shape_string(it->second->shape));
    }
    for (auto& v : it->second->values) v = io::parse_real<T>(detail::next_token(in, key));
    ++filled;
  }
  if (filled != by_name.size()) {
    throw FormatError("checkpoint: " + std::to_string(by_name.size() - filled) + " tensors missing");
  }
  return model;
}

template <class T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("missing checkpoint: " + path.string());
  return parse_checkpoint<T>(io::read_file(path.string()));
}

template <class T>
std::string centers_text(const CenterBank<T>& bank) {
  std::string out;
  detail::write_rows(out, bank.centers);
  return out;
}

template <class T>
void save_centers(const std::filesystem::path& path, const CenterBank<T>& bank) {
  io::write_file(path.string(), centers_text(bank));
}

template <class T>
CenterBank<T> load_centers(const std::filesystem::path& path, T center_lr = T(0.5)) {
  if (!std::filesystem::exists(path)) throw MissingFileError("missing center file: " + path.string());
  const auto text = io::read_file(path.string());
  std::vector<T> values;
  std::size_t rows = 0, cols = 0;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    std::string tok;
    std::size_t n = 0;
    while (fields >> tok) {
      values.push_back(io::parse_real<T>(tok));
      ++n;
    }
    if (n == 0) continue;
    if (rows > 0 && n != cols) throw FormatError(path.string() + ": ragged center rows");
    cols = n;
    ++rows;
  }
  if (rows == 0) throw FormatError(path.string() + ": no centers");
  return {Tensor<T>({rows, cols}, std::move(values)), center_lr};
}

}  // namespace cmcl
