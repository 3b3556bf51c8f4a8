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

#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vilas/frontend.hpp"
#include "vilas/nn.hpp"

namespace vilas {

enum class Modality { kVisual, kLinguistic };

inline const char* modality_name(Modality m) { return m == Modality::kVisual ? "visual" : "linguistic"; }

// Frozen cue features (rows x D), or the single zero-row placeholder used when
// a modality is missing.
struct CueSequence {
  Matrix vectors;
  Modality modality = Modality::kVisual;
  bool is_placeholder = false;

  std::size_t length() const { return vectors.rows; }
  std::size_t dim() const { return vectors.cols; }

  static CueSequence placeholder(Modality m, std::size_t dim) { return {Matrix(1, dim), m, true}; }
};

struct MultimodalCues {
  CueSequence visual;
  CueSequence linguistic;
};

enum class ProviderKind { kStub, kPrecomputed };

inline std::vector<std::string> split_whitespace(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

namespace detail {

// Deterministic unit-variance row keyed by a string.
inline void hash_row(float* out, std::size_t dim, std::uint64_t seed, const std::string& key) {
  Rng rng(mix_seed(seed, key));
  for (std::size_t j = 0; j < dim; ++j) out[j] = static_cast<float>(rng.normal());
}

inline Matrix load_cue_file(const std::filesystem::path& path, std::size_t dim, const char* what) {
  if (!std::filesystem::exists(path)) {
    throw RuntimeError(std::string(what) + " feature file not found: " + path.string());
  }
  Matrix m = read_matrix_file(path);
  if (m.cols != dim) {
    throw FormatError(std::string(what) + " feature file " + path.string() + " has dimension " +
                      std::to_string(m.cols) + ", corpus expects " + std::to_string(dim));
  }
  if (m.rows == 0) throw FormatError(std::string(what) + " feature file " + path.string() + " is empty");
  return m;
}

}  // namespace detail

// Stands in for a frozen image encoder. Stub: `rows` pseudo-random vectors
// keyed by (ref, seed). Precomputed: ref names a VLSF file (relative refs are
// resolved against base_dir).
class VisualProvider {
 public:
  VisualProvider(ProviderKind kind, std::size_t dim, std::uint64_t seed = 0, std::size_t rows = 4,
                 std::filesystem::path base_dir = {})
      : kind_(kind), dim_(dim), seed_(seed), rows_(rows), base_dir_(std::move(base_dir)) {
    if (dim_ == 0) throw ConfigError("visual provider: dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  ProviderKind kind() const { return kind_; }

  CueSequence provide(const std::optional<std::string>& image_ref) const {
    if (!image_ref || image_ref->empty()) return CueSequence::placeholder(Modality::kVisual, dim_);
    if (kind_ == ProviderKind::kPrecomputed) {
      std::filesystem::path p(*image_ref);
      if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
      return {detail::load_cue_file(p, dim_, "visual"), Modality::kVisual, false};
    }
    Matrix m(rows_, dim_);
    for (std::size_t r = 0; r < rows_; ++r) {
      detail::hash_row(&m.data[r * dim_], dim_, seed_, "img:" + *image_ref + "#" + std::to_string(r));
    }
    return {std::move(m), Modality::kVisual, false};
  }

 private:
  ProviderKind kind_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::size_t rows_;
  std::filesystem::path base_dir_;
};

// Stands in for a frozen text encoder. Stub: N words -> N + 2 rows
// ([CLS], words..., [SEP]); each row is a per-word hash vector plus a
// sinusoidal position tag of amplitude 0.1. Precomputed: text is a VLSF path.
class LinguisticProvider {
 public:
  LinguisticProvider(ProviderKind kind, std::size_t dim, std::uint64_t seed = 0,
                     std::filesystem::path base_dir = {})
      : kind_(kind), dim_(dim), seed_(seed), base_dir_(std::move(base_dir)) {
    if (dim_ == 0) throw ConfigError("linguistic provider: dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  ProviderKind kind() const { return kind_; }

  CueSequence provide(const std::optional<std::string>& text) const {
    if (!text) return CueSequence::placeholder(Modality::kLinguistic, dim_);
    if (kind_ == ProviderKind::kPrecomputed) {
      if (text->empty()) return CueSequence::placeholder(Modality::kLinguistic, dim_);
      std::filesystem::path p(*text);
      if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
      return {detail::load_cue_file(p, dim_, "linguistic"), Modality::kLinguistic, false};
    }
    return provide(split_whitespace(*text));
  }

  CueSequence provide(const std::vector<std::string>& words) const {
    if (words.empty()) return CueSequence::placeholder(Modality::kLinguistic, dim_);
    const std::size_t n = words.size() + 2;
    Matrix m(n, dim_);
    auto pe = nn::sinusoidal_positions<float>(n, dim_);
    for (std::size_t r = 0; r < n; ++r) {
      const std::string key = r == 0 ? "[CLS]" : r + 1 == n ? "[SEP]" : "tok:" + words[r - 1];
      detail::hash_row(&m.data[r * dim_], dim_, seed_, key);
      for (std::size_t j = 0; j < dim_; ++j) m.data[r * dim_ + j] += 0.1f * pe.values()[r * dim_ + j];
    }
    return {std::move(m), Modality::kLinguistic, false};
  }

 private:
  ProviderKind kind_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::filesystem::path base_dir_;
};

template <class T>
struct ProjectedCue {
  Tensor<T> vectors;  // [rows, d_model]
  Modality modality = Modality::kVisual;
  bool is_placeholder = false;
};

template <class T>
struct ProjectedCues {
  ProjectedCue<T> visual;
  ProjectedCue<T> linguistic;
};

inline std::string projection_name(Modality m) {
  return std::string("perception.") + modality_name(m) + ".proj";
}

template <class T>
void create_perception_params(ParamStore<T>& p, std::size_t visual_dim, std::size_t linguistic_dim,
                              std::size_t d_model, std::uint64_t seed) {
  nn::make_linear(p, projection_name(Modality::kVisual), visual_dim, d_model, seed);
  nn::make_linear(p, projection_name(Modality::kLinguistic), linguistic_dim, d_model, seed);
}

// Provider output is a constant; only the projection is trainable. The
// placeholder goes through the same map, so its image is the bias.
template <class T>
ProjectedCue<T> project(const CueSequence& cue, const ParamStore<T>& p) {
  const auto& w = p.get(projection_name(cue.modality) + ".w");
  if (w.dim(0) != cue.dim()) {
    throw ShapeError(std::string("project: ") + modality_name(cue.modality) + " cue width " +
                     std::to_string(cue.dim()) + " vs projection input " + std::to_string(w.dim(0)));
  }
  return {nn::apply_linear(p, projection_name(cue.modality), to_tensor<T>(cue.vectors)), cue.modality,
          cue.is_placeholder};
}

template <class T>
ProjectedCues<T> project(const MultimodalCues& cues, const ParamStore<T>& p) {
  return {project(cues.visual, p), project(cues.linguistic, p)};
}

}  // namespace vilas
