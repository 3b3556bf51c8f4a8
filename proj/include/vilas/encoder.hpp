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

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "vilas/frontend.hpp"
#include "vilas/matrix.hpp"
#include "vilas/nn.hpp"

namespace vilas {

// Convolution front-end + conformer blocks with max-pooling over time.
// Defaults are desk-scale; the full-size model is conv_out_channels = 128,
// num_blocks = 15, d_model = 256, d_ffn = 2048, heads = 4,
// depthwise_kernel = 15, pool_after_blocks = {5, 10}.
struct EncoderConfig {
  std::size_t conv_out_channels = 128;
  std::size_t conv_kernel = 3;
  std::size_t conv_stride = 2;
  std::size_t num_blocks = 4;
  std::size_t d_model = 64;
  std::size_t d_ffn = 256;
  std::size_t heads = 4;
  std::size_t depthwise_kernel = 7;
  // 1-based: a pool follows the k-th block. Each k must be < num_blocks.
  std::vector<std::size_t> pool_after_blocks = {2};

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (heads == 0 || d_model % heads) out.push_back("encoder: d_model must be divisible by heads");
    if (conv_kernel == 0 || conv_kernel % 2 == 0) out.push_back("encoder: conv_kernel must be odd");
    if (conv_stride == 0) out.push_back("encoder: conv_stride must be positive");
    if (depthwise_kernel == 0 || depthwise_kernel % 2 == 0) {
      out.push_back("encoder: depthwise_kernel must be odd");
    }
    for (auto k : pool_after_blocks)
      if (k == 0 || k >= num_blocks) {
        out.push_back("encoder: pool index " + std::to_string(k) + " must be in [1, num_blocks)");
      }
    return out;
  }

  std::size_t subsampling_factor() const {
    return conv_stride * (std::size_t{1} << pool_after_blocks.size());
  }

  // Front-end output length for T input frames ("same"-style padding k/2).
  std::size_t conv_length(std::size_t n) const {
    const std::size_t pad = conv_kernel / 2;
    return (n + 2 * pad - conv_kernel) / conv_stride + 1;
  }

  // U as a function of T: the conv front-end, then ceil(U/2) per pool.
  std::size_t output_length(std::size_t T) const {
    if (T == 0) return 0;
    std::size_t u = conv_length(T);
    for (std::size_t i = 0; i < pool_after_blocks.size(); ++i) u = (u + 1) / 2;
    return u;
  }
};

// Encoder output H plus the time span (in input frames) each row covers.
template <class T>
struct AcousticStates {
  Tensor<T> states;  // [U, d_model]
  std::size_t subsampling_factor = 1;
  std::size_t input_frames = 0;
  std::vector<std::pair<std::size_t, std::size_t>> spans;

  std::size_t length() const { return states.dim(0); }
};

template <class T>
void create_encoder_params(ParamStore<T>& p, const EncoderConfig& cfg, std::size_t feat_dim,
                           std::size_t vocab_size, std::uint64_t seed) {
  const std::size_t d = cfg.d_model, C = cfg.conv_out_channels;
  const std::size_t freq_out = cfg.conv_length(feat_dim);
  p.create("encoder.frontend.conv.w", {C, 1, cfg.conv_kernel, cfg.conv_kernel}, Init::kXavier, seed);
  p.create("encoder.frontend.conv.b", {C}, Init::kZeros, seed);
  nn::make_linear(p, "encoder.frontend.proj", C * freq_out, d, seed);
  for (std::size_t i = 1; i <= cfg.num_blocks; ++i) {
    const std::string b = "encoder.block" + std::to_string(i);
    nn::make_ffn(p, b + ".ffn1", d, cfg.d_ffn, seed);
    nn::make_attention(p, b + ".mhsa", d, seed);
    nn::make_layer_norm(p, b + ".conv.ln", d, seed);
    nn::make_linear(p, b + ".conv.pw1", d, 2 * d, seed);
    p.create(b + ".conv.dw.w", {d, 1, cfg.depthwise_kernel}, Init::kXavier, seed);
    p.create(b + ".conv.dw.b", {d}, Init::kZeros, seed);
    nn::make_layer_norm(p, b + ".conv.norm", d, seed);
    nn::make_linear(p, b + ".conv.pw2", d, d, seed);
    nn::make_ffn(p, b + ".ffn2", d, cfg.d_ffn, seed);
    nn::make_layer_norm(p, b + ".ln_out", d, seed);
  }
  nn::make_linear(p, "encoder.ctc", d, vocab_size + 1, seed);
}

// Convolution module: ln -> pointwise (2d) -> GLU -> depthwise -> norm ->
// swish -> pointwise -> dropout. Layer norm stands in for batch norm.
template <class T>
Tensor<T> conformer_conv_module(const ParamStore<T>& p, const std::string& name,
                                const Tensor<T>& x, const EncoderConfig& cfg,
                                const nn::ForwardContext& ctx) {
  const std::size_t d = cfg.d_model;
  auto h = nn::apply_layer_norm(p, name + ".ln", x);
  h = nn::apply_linear(p, name + ".pw1", h);
  h = mul(slice(h, 1, 0, d), sigmoid(slice(h, 1, d, 2 * d)));
  h = conv1d(h, p.get(name + ".dw.w"), p.get(name + ".dw.b"), 1, cfg.depthwise_kernel / 2, d);
  h = swish(nn::apply_layer_norm(p, name + ".norm", h));
  return nn::maybe_dropout(nn::apply_linear(p, name + ".pw2", h), ctx);
}

// Macaron block: x + FFN/2, + MHSA, + conv module, + FFN/2, final norm.
template <class T>
Tensor<T> conformer_block(const Tensor<T>& x, const ParamStore<T>& p, const std::string& name,
                          const EncoderConfig& cfg, const nn::ForwardContext& ctx) {
  const T half(0.5);
  auto y = add(x, scale(nn::maybe_dropout(nn::apply_ffn(p, name + ".ffn1", x, ctx), ctx), half));
  auto h = nn::apply_layer_norm(p, name + ".mhsa.ln", y);
  y = add(y, nn::maybe_dropout(nn::apply_attention(p, name + ".mhsa", h, h, cfg.heads, nullptr, nullptr), ctx));
  y = add(y, conformer_conv_module(p, name + ".conv", y, cfg, ctx));
  y = add(y, scale(nn::maybe_dropout(nn::apply_ffn(p, name + ".ffn2", y, ctx), ctx), half));
  return nn::apply_layer_norm(p, name + ".ln_out", y);
}

// feat [T, F] -> H [U, d_model]. U = cfg.output_length(T).
template <class T>
AcousticStates<T> encode(const Tensor<T>& feat, const EncoderConfig& cfg, const ParamStore<T>& p,
                         const nn::ForwardContext& ctx = {}) {
  if (feat.rank() != 2) throw ShapeError("encode: features must be [T, F], got " + shape_str(feat.shape()));
  const std::size_t Tn = feat.dim(0), F = feat.dim(1);
  if (cfg.output_length(Tn) == 0) {
    throw ShapeError("encode: utterance of " + std::to_string(Tn) + " frames is too short to survive subsampling");
  }
  const auto& conv_w = p.get("encoder.frontend.conv.w");
  const std::size_t C = conv_w.dim(0);
  auto x = conv2d(reshape(feat, {1, Tn, F}), conv_w, p.get("encoder.frontend.conv.b"),
                  cfg.conv_stride, cfg.conv_kernel / 2);
  x = relu(x);
  const std::size_t Tc = x.dim(1), Fc = x.dim(2);
  x = reshape(permute(x, {1, 0, 2}), {Tc, C * Fc});
  x = nn::apply_linear(p, "encoder.frontend.proj", x);
  x = add(x, nn::sinusoidal_positions<T>(Tc, cfg.d_model));
  x = nn::maybe_dropout(x, ctx);
  for (std::size_t i = 1; i <= cfg.num_blocks; ++i) {
    x = conformer_block(x, p, "encoder.block" + std::to_string(i), cfg, ctx);
    if (std::find(cfg.pool_after_blocks.begin(), cfg.pool_after_blocks.end(), i) !=
        cfg.pool_after_blocks.end()) {
      x = max_pool1d(x, 2, 2);
    }
  }
  AcousticStates<T> out;
  out.states = x;
  out.subsampling_factor = cfg.subsampling_factor();
  out.input_frames = Tn;
  const std::size_t s = out.subsampling_factor;
  for (std::size_t u = 0; u < x.dim(0); ++u) {
    out.spans.emplace_back(std::min(u * s, Tn), std::min((u + 1) * s, Tn));
  }
  return out;
}

template <class T>
AcousticStates<T> encode(const FeatureSequence& feat, const EncoderConfig& cfg, const ParamStore<T>& p,
                         const nn::ForwardContext& ctx = {}) {
  return encode(to_tensor<T>(feat.frames), cfg, p, ctx);
}

// Auxiliary CTC projection on the final states: [U, V+1] log-probabilities,
// blank = V.
template <class T>
Tensor<T> ctc_head(const AcousticStates<T>& h, const ParamStore<T>& p) {
  return log_softmax(nn::apply_linear(p, "encoder.ctc", h.states));
}

}  // namespace vilas
