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

#include <optional>
#include <string>
#include <vector>

#include "vilas/cif.hpp"
#include "vilas/decoder.hpp"
#include "vilas/encoder.hpp"
#include "vilas/perception.hpp"

namespace vilas {

struct ModelConfig {
  std::size_t feat_dim = 80;
  std::size_t vocab_size = 0;
  std::size_t visual_dim = 16;
  std::size_t linguistic_dim = 16;
  EncoderConfig encoder;
  CifConfig cif;
  DecoderConfig decoder;

  std::vector<std::string> problems() const {
    std::vector<std::string> out = encoder.problems();
    for (auto& s : cif.problems()) out.push_back(s);
    for (auto& s : decoder.problems()) out.push_back(s);
    if (feat_dim == 0) out.push_back("model: feat_dim must be positive");
    if (vocab_size < 5) out.push_back("model: vocab_size must exceed the 4 reserved tokens");
    if (visual_dim == 0 || linguistic_dim == 0) out.push_back("model: cue dimensions must be positive");
    if (encoder.d_model != decoder.d_model) out.push_back("model: encoder and decoder d_model differ");
    return out;
  }
};

template <class T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore<T> p;
  create_encoder_params(p, cfg.encoder, cfg.feat_dim, cfg.vocab_size, seed);
  create_cif_params(p, cfg.cif, cfg.encoder.d_model, seed);
  create_perception_params(p, cfg.visual_dim, cfg.linguistic_dim, cfg.decoder.d_model, seed);
  create_decoder_params(p, cfg.decoder, cfg.vocab_size, seed);
  return p;
}

// Lists parameter names/shapes in `have` that disagree with what `cfg` builds.
template <class T>
std::vector<std::string> shape_mismatches(const ModelConfig& cfg, const ParamStore<T>& have) {
  const auto want = init_params<T>(cfg, 0);
  std::vector<std::string> out;
  for (const auto& [name, t] : want) {
    if (!have.contains(name)) {
      out.push_back("missing " + name);
    } else if (have.get(name).shape() != t.shape()) {
      out.push_back(name + ": checkpoint " + shape_str(have.get(name).shape()) + ", config " + shape_str(t.shape()));
    }
  }
  for (const auto& [name, _] : have)
    if (!want.contains(name)) out.push_back("unexpected " + name);
  return out;
}

// Encoder + CIF. With a target length the weights are scaled so exactly
// that many steps fire (teacher forcing); without, raw alpha is integrated.
template <class T>
struct AcousticPass {
  AcousticStates<T> states;
  FiringWeights<T> weights;
  FiredSequence<T> fired;
};

template <class T>
AcousticPass<T> run_acoustics(const ModelConfig& cfg, const ParamStore<T>& p, const Tensor<T>& feat,
                              std::optional<std::size_t> target_len, const nn::ForwardContext& ctx = {}) {
  AcousticPass<T> out{encode(feat, cfg.encoder, p, ctx), {}, {}};
  out.weights = predict_weights(out.states, p, cfg.cif);
  const std::size_t cap = cfg.cif.firing_cap_factor * out.states.length();
  if (target_len) {
    out.weights = scale_weights(out.weights, *target_len);
    out.fired = integrate_and_fire(out.states.states, *out.weights.alpha_scaled, cfg.cif.threshold,
                                   cfg.cif.tail_threshold, cap);
  } else {
    out.fired = integrate_and_fire(out.states.states, out.weights.alpha, cfg.cif.threshold,
                                   cfg.cif.tail_threshold, cap);
  }
  return out;
}

}  // namespace vilas
