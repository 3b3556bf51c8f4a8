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
#include <string>
#include <type_traits>
#include <vector>

#include "vilas/numerics/ops.hpp"
#include "vilas/numerics/param_store.hpp"

// Parameterized building blocks shared by the encoder and decoder. Every
// helper reads its weights from a ParamStore under a dotted prefix.
namespace vilas::nn {

// Training-time knobs threaded through a forward pass.
struct ForwardContext {
  bool train = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

template <class T>
Tensor<T> maybe_dropout(const Tensor<T>& x, const ForwardContext& ctx) {
  if (!ctx.train || ctx.dropout <= 0.0 || ctx.rng == nullptr) return x;
  return dropout(x, ctx.dropout, *ctx.rng);
}

template <class T>
void make_linear(ParamStore<T>& p, const std::string& name, std::size_t in,
                 std::size_t out, std::uint64_t seed) {
  p.create(name + ".w", {in, out}, Init::kXavier, seed);
  p.create(name + ".b", {out}, Init::kZeros, seed);
}

template <class T>
void make_layer_norm(ParamStore<T>& p, const std::string& name, std::size_t d,
                     std::uint64_t seed) {
  p.create(name + ".g", {d}, Init::kOnes, seed);
  p.create(name + ".b", {d}, Init::kZeros, seed);
}

template <class T>
Tensor<T> apply_linear(const ParamStore<T>& p, const std::string& name, const Tensor<T>& x) {
  return linear(x, p.get(name + ".w"), p.get(name + ".b"));
}

template <class T>
Tensor<T> apply_layer_norm(const ParamStore<T>& p, const std::string& name, const Tensor<T>& x) {
  return layer_norm(x, p.get(name + ".g"), p.get(name + ".b"));
}

// Position-wise feed-forward: ln -> fc1 -> swish -> dropout -> fc2.
template <class T>
void make_ffn(ParamStore<T>& p, const std::string& name, std::size_t d, std::size_t d_ffn,
              std::uint64_t seed) {
  make_layer_norm(p, name + ".ln", d, seed);
  make_linear(p, name + ".fc1", d, d_ffn, seed);
  make_linear(p, name + ".fc2", d_ffn, d, seed);
}

template <class T>
Tensor<T> apply_ffn(const ParamStore<T>& p, const std::string& name, const Tensor<T>& x,
                    const ForwardContext& ctx) {
  auto h = apply_layer_norm(p, name + ".ln", x);
  h = maybe_dropout(swish(apply_linear(p, name + ".fc1", h)), ctx);
  return apply_linear(p, name + ".fc2", h);
}

// Attention weights as plain numbers, [queries x keys] per head.
struct AttentionProbs {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::vector<double>> per_head;

  // Average over heads, row-major queries x keys.
  std::vector<double> head_mean() const {
    std::vector<double> out(queries * keys, 0.0);
    for (const auto& h : per_head)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += h[i];
    for (auto& v : out) v /= static_cast<double>(per_head.size());
    return out;
  }
};

template <class T>
void make_attention(ParamStore<T>& p, const std::string& name, std::size_t d,
                    std::uint64_t seed) {
  make_layer_norm(p, name + ".ln", d, seed);
  for (const char* part : {".q", ".k", ".v", ".o"}) make_linear(p, name + part, d, d, seed);
}

// Scaled dot-product attention on already-projected Q [n,d], K/V [m,d],
// split into `heads` column groups. `mask` (optional) is added to the logits.
template <class T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                 std::size_t heads, const std::type_identity_t<Tensor<T>>* mask, AttentionProbs* capture) {
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dk = d / heads;
  const T inv = T(1) / std::sqrt(static_cast<T>(dk));
  if (capture) {
    capture->queries = q.dim(0);
    capture->keys = k.dim(0);
    capture->per_head.clear();
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : slice(q, 1, h * dk, (h + 1) * dk);
    auto kh = heads == 1 ? k : slice(k, 1, h * dk, (h + 1) * dk);
    auto vh = heads == 1 ? v : slice(v, 1, h * dk, (h + 1) * dk);
    auto logits = scale(matmul(qh, transpose(kh)), inv);
    if (mask) logits = add(logits, *mask);
    auto probs = softmax(logits);
    if (capture) capture->per_head.emplace_back(probs.values().begin(), probs.values().end());
    outs.push_back(matmul(probs, vh));
  }
  return outs.size() == 1 ? outs[0] : concat(outs, 1);
}

// Full multi-head attention sub-layer (projections included, no residual):
// queries from q_in [n,d], keys/values from kv_in [m,d].
template <class T>
Tensor<T> apply_attention(const ParamStore<T>& p, const std::string& name, const Tensor<T>& q_in,
                          const Tensor<T>& kv_in, std::size_t heads, const std::type_identity_t<Tensor<T>>* mask,
                          AttentionProbs* capture) {
  auto q = apply_linear(p, name + ".q", q_in);
  auto k = apply_linear(p, name + ".k", kv_in);
  auto v = apply_linear(p, name + ".v", kv_in);
  return apply_linear(p, name + ".o", attend(q, k, v, heads, mask, capture));
}

// Absolute sinusoidal positions [n, d].
template <class T>
Tensor<T> sinusoidal_positions(std::size_t n, std::size_t d) {
  std::vector<T> pe(n * d);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double a = static_cast<double>(pos) * freq;
      pe[pos * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  return Tensor<T>(Shape{n, d}, std::move(pe));
}

}  // namespace vilas::nn
