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
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cmcl/error.hpp"

namespace cmcl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of reals. Rank 1 and rank 2 are the only ranks the
/// library produces; a rank-1 tensor of length n behaves as a 1 x n matrix.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
  std::optional<std::vector<T>> grad;

  Tensor() = default;
  Tensor(Shape s, std::vector<T> v, bool needs_grad = false)
      : shape(std::move(s)), values(std::move(v)), requires_grad(needs_grad) {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw ShapeError("shape " + shape_string(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
  }

  static Tensor zeros(Shape s, bool needs_grad = false) {
    auto n = shape_size(s);
    return Tensor(std::move(s), std::vector<T>(n, T(0)), needs_grad);
  }
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<T> v) {
    return Tensor({r, c}, std::move(v));
  }
  static Tensor vector(std::vector<T> v) {
    auto n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.size() == 2 ? shape[1] : values.size(); }

  T& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  void zero_grad() {
    if (requires_grad) grad.emplace(values.size(), T(0));
    else grad.reset();
  }
};

}  // namespace cmcl
