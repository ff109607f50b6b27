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

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "cmcl/error.hpp"

namespace cmcl {

enum class ModalityKind { kVector, kPointSet };

inline std::string_view to_string(ModalityKind kind) {
  return kind == ModalityKind::kVector ? "vector" : "point-set";
}

inline ModalityKind parse_modality_kind(std::string_view s) {
  if (s == "vector") return ModalityKind::kVector;
  if (s == "point-set") return ModalityKind::kPointSet;
  throw ConfigError("kind", "unknown modality kind '" + std::string(s) +
                                "' (expected vector or point-set)");
}

/// One modality's input description. For point sets `dim` is the per-point
/// dimension.
struct ModalitySpec {
  std::string name;
  ModalityKind kind = ModalityKind::kVector;
  std::size_t dim = 0;

  bool operator==(const ModalitySpec&) const = default;
};

/// Raw input of one (instance, modality). A vector sample has one row; a point
/// set has `rows` unordered points of `values.size() / rows` coordinates each.
struct Sample {
  std::size_t rows = 1;
  std::vector<float> values;

  std::size_t dim() const { return rows == 0 ? 0 : values.size() / rows; }
  bool operator==(const Sample&) const = default;
};

}  // namespace cmcl
