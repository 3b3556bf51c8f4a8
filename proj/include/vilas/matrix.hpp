// Copyright 2026 The vilas Authors
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
#include <vector>

#include "vilas/error.hpp"
#include "vilas/numerics/tensor.hpp"

namespace vilas {

// Plain row-major float32 matrix: the unit of data on disk (features, cue
// sequences) before it enters a graph.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<float> v)
      : rows(r), cols(c), data(std::move(v)) {
    if (data.size() != r * c) throw ShapeError("Matrix: value count mismatch");
  }

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool operator==(const Matrix&) const = default;
};

template <class T>
Tensor<T> to_tensor(const Matrix& m) {
  return Tensor<T>(Shape{m.rows, m.cols}, std::vector<T>(m.data.begin(), m.data.end()));
}

template <class T>
Matrix to_matrix(const Tensor<T>& t) {
  if (t.rank() != 2) throw ShapeError("to_matrix: expects rank 2, got " + shape_str(t.shape()));
  return Matrix(t.dim(0), t.dim(1), std::vector<float>(t.values().begin(), t.values().end()));
}

}  // namespace vilas
