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

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vilas/nn.hpp"
#include "vilas/perception.hpp"

namespace vilas {

enum class BlockRole { kInitial, kVisual, kLinguistic };

inline const char* role_name(BlockRole r) {
  switch (r) {
    case BlockRole::kInitial: return "initial";
    case BlockRole::kVisual: return "visual";
    case BlockRole::kLinguistic: return "linguistic";
  }
  return "?";
}

// Which decoder blocks fuse which modality. Blocks are numbered from 1; any
// block not listed as visual or linguistic is a plain (initial) block.
struct FusionPlan {
  std::size_t num_blocks = 6;
  std::set<std::size_t> visual{3, 4};
  std::set<std::size_t> linguistic{5, 6};

  BlockRole role(std::size_t block) const {
    if (visual.count(block)) return BlockRole::kVisual;
    if (linguistic.count(block)) return BlockRole::kLinguistic;
    return BlockRole::kInitial;
  }
  bool fuses(std::size_t block) const { return role(block) != BlockRole::kInitial; }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (num_blocks == 0) out.push_back("fusion plan: num_blocks must be positive");
    for (const auto* s : {&visual, &linguistic}) {
      for (auto b : *s) {
        if (b == 0 || b > num_blocks) {
          out.push_back("fusion plan: block " + std::to_string(b) + " outside 1.." + std::to_string(num_blocks));
        }
      }
    }
    for (auto b : visual) {
      if (linguistic.count(b)) out.push_back("fusion plan: block " + std::to_string(b) + " has two roles");
    }
    if (visual.count(1) || linguistic.count(1)) {
      out.push_back("fusion plan: block 1 must be an initial block");
    }
    return out;
  }

  bool operator==(const FusionPlan&) const = default;

  // The fusion placements explored with six decoder blocks, E1..E8.
  static FusionPlan named(const std::string& id) {
    static const std::map<std::string, std::pair<std::set<std::size_t>, std::set<std::size_t>>> kPlans = {
        {"E1", {{3, 4}, {5, 6}}}, {"E2", {{5, 6}, {3, 4}}}, {"E3", {{3, 4}, {}}},
        {"E4", {{5, 6}, {}}},     {"E5", {{3, 4, 5, 6}, {}}}, {"E6", {{}, {3, 4}}},
        {"E7", {{}, {5, 6}}},     {"E8", {{}, {3, 4, 5, 6}}},
    };
    auto it = kPlans.find(id);
    if (it == kPlans.end()) throw ConfigError("unknown fusion plan id: " + id);
    return {6, it->second.first, it->second.second};
  }
};

inline FusionPlan swap_fusion_order(const FusionPlan& plan) {
  FusionPlan out = plan;
  std::swap(out.visual, out.linguistic);
  return out;
}

struct DecoderConfig {
  std::size_t d_model = 64;
  std::size_t d_ffn = 256;
  std::size_t heads = 4;
  FusionPlan plan;

  std::vector<std::string> problems() const {
    std::vector<std::string> out = plan.problems();
    if (d_model == 0) out.push_back("decoder: d_model must be positive");
    if (heads == 0 || d_model % heads) out.push_back("decoder: d_model must be divisible by heads");
    if (d_ffn == 0) out.push_back("decoder: d_ffn must be positive");
    return out;
  }
};

inline std::string decoder_block_name(std::size_t b) { return "decoder.block" + std::to_string(b); }

// Cross-attention parameters exist for every block that fuses under the plan.
// Swapping visual and linguistic roles therefore keeps the same names.
template <class T>
void create_decoder_params(ParamStore<T>& p, const DecoderConfig& cfg, std::size_t vocab_size,
                           std::uint64_t seed) {
  const std::size_t d = cfg.d_model;
  p.create("decoder.embed.w", {vocab_size, d}, Init::kNormal, seed, 1.0 / std::sqrt(static_cast<double>(d)));
  p.create("decoder.begin.w", {1, d}, Init::kNormal, seed, 1.0 / std::sqrt(static_cast<double>(d)));
  nn::make_linear(p, "decoder.in", 2 * d, d, seed);
  for (std::size_t b = 1; b <= cfg.plan.num_blocks; ++b) {
    const auto name = decoder_block_name(b);
    nn::make_attention(p, name + ".self", d, seed);
    if (cfg.plan.fuses(b)) nn::make_attention(p, name + ".cross", d, seed);
    nn::make_ffn(p, name + ".ffn", d, cfg.d_ffn, seed);
  }
  nn::make_layer_norm(p, "decoder.ln_out", d, seed);
  nn::make_linear(p, "decoder.acoustic", d, d, seed);
  nn::make_linear(p, "decoder.out", d, vocab_size, seed);
}

// Attention over cue rows, one I x rows matrix per modality (mean over heads
// and over that modality's blocks). Per-block per-head maps when requested.
struct FusionAttention {
  std::size_t steps = 0;
  std::size_t visual_keys = 0;
  std::size_t linguistic_keys = 0;
  std::vector<double> visual;      // steps x visual_keys, empty if unused
  std::vector<double> linguistic;  // steps x linguistic_keys, empty if unused
  std::map<std::size_t, nn::AttentionProbs> per_block;  // filled when keep_heads
};

template <class T>
struct DecoderOutput {
  Tensor<T> logprobs;  // [I, V]
  std::optional<FusionAttention> attention;
};

namespace detail {

inline void accumulate_attention(FusionAttention& fa, BlockRole role, const nn::AttentionProbs& probs,
                                 std::size_t row_offset) {
  auto& dst = role == BlockRole::kVisual ? fa.visual : fa.linguistic;
  const std::size_t keys = probs.keys;
  (role == BlockRole::kVisual ? fa.visual_keys : fa.linguistic_keys) = keys;
  if (dst.size() < fa.steps * keys) dst.resize(fa.steps * keys, 0.0);
  const auto mean = probs.head_mean();
  for (std::size_t q = 0; q < probs.queries; ++q)
    for (std::size_t k = 0; k < keys; ++k) dst[(row_offset + q) * keys + k] += mean[q * keys + k];
}

inline void finish_attention(FusionAttention& fa, const FusionPlan& plan) {
  std::size_t nv = 0, nl = 0;
  for (std::size_t b = 1; b <= plan.num_blocks; ++b) {
    nv += plan.role(b) == BlockRole::kVisual;
    nl += plan.role(b) == BlockRole::kLinguistic;
  }
  if (nv) for (auto& v : fa.visual) v /= static_cast<double>(nv);
  if (nl) for (auto& v : fa.linguistic) v /= static_cast<double>(nl);
}

template <class T>
const Tensor<T>& cue_for(BlockRole role, const ProjectedCues<T>& cues) {
  return role == BlockRole::kVisual ? cues.visual.vectors : cues.linguistic.vectors;
}

}  // namespace detail

struct DecodeOptions {
  bool capture_attention = false;
  bool keep_heads = false;
};

// Teacher-forced pass over all I steps at once. Step i (0-based) sees
// [c_{i-1}; embed(y_{i-1})] with c_{-1} = 0 and y_{-1} = the begin embedding,
// causal self-attention over earlier steps, cross-attention to cues in fusion
// blocks, and adds a linear map of c_i before the output projection.
template <class T>
DecoderOutput<T> decode_teacher_forced(const Tensor<T>& C, const std::vector<int>& target,
                                       const ProjectedCues<T>& cues, const DecoderConfig& cfg,
                                       const ParamStore<T>& p, const nn::ForwardContext& ctx = {},
                                       const DecodeOptions& opts = {}) {
  if (C.rank() != 2 || C.dim(1) != cfg.d_model) {
    throw ShapeError("decode_teacher_forced: C must be [I, " + std::to_string(cfg.d_model) + "], got " +
                     shape_str(C.shape()));
  }
  const std::size_t I = C.dim(0), d = cfg.d_model;
  if (target.size() != I) {
    throw ShapeError("decode_teacher_forced: " + std::to_string(I) + " fired steps vs target length " +
                     std::to_string(target.size()));
  }
  if (I == 0) throw ShapeError("decode_teacher_forced: zero steps");
  const auto& embed = p.get("decoder.embed.w");
  for (int t : target) {
    if (t < 0 || static_cast<std::size_t>(t) >= embed.dim(0)) {
      throw ShapeError("decode_teacher_forced: token id " + std::to_string(t) + " outside vocabulary");
    }
  }

  std::vector<Tensor<T>> prev_c{Tensor<T>::zeros({1, d})};
  std::vector<Tensor<T>> prev_e{p.get("decoder.begin.w")};
  if (I > 1) {
    prev_c.push_back(slice(C, 0, 0, I - 1));
    prev_e.push_back(embedding(embed, std::vector<int>(target.begin(), target.end() - 1)));
  }
  auto x = concat<T>({concat(prev_c, 0), concat(prev_e, 0)}, 1);
  x = nn::apply_linear(p, "decoder.in", x);
  x = nn::maybe_dropout(add(x, nn::sinusoidal_positions<T>(I, d)), ctx);

  auto mask = causal_mask<T>(I);
  std::optional<FusionAttention> fa;
  if (opts.capture_attention) {
    fa.emplace();
    fa->steps = I;
  }
  for (std::size_t b = 1; b <= cfg.plan.num_blocks; ++b) {
    const auto name = decoder_block_name(b);
    auto h = nn::apply_layer_norm(p, name + ".self.ln", x);
    x = add(x, nn::maybe_dropout(nn::apply_attention(p, name + ".self", h, h, cfg.heads, &mask, nullptr), ctx));
    const BlockRole role = cfg.plan.role(b);
    if (role != BlockRole::kInitial) {
      nn::AttentionProbs probs;
      h = nn::apply_layer_norm(p, name + ".cross.ln", x);
      x = add(x, nn::maybe_dropout(nn::apply_attention(p, name + ".cross", h, detail::cue_for(role, cues),
                                                       cfg.heads, nullptr, fa ? &probs : nullptr),
                                   ctx));
      if (fa) {
        detail::accumulate_attention(*fa, role, probs, 0);
        if (opts.keep_heads) fa->per_block[b] = probs;
      }
    }
    x = add(x, nn::maybe_dropout(nn::apply_ffn(p, name + ".ffn", x, ctx), ctx));
  }
  if (fa) detail::finish_attention(*fa, cfg.plan);
  x = nn::apply_layer_norm(p, "decoder.ln_out", x);
  x = add(x, nn::apply_linear(p, "decoder.acoustic", C));
  return {log_softmax(nn::apply_linear(p, "decoder.out", x)), std::move(fa)};
}

// Incremental state: step index, previous token and c, and per-block
// self-attention keys/values for the steps already taken.
template <class T>
struct DecoderState {
  std::size_t step = 0;
  int prev_token = -1;  // -1: begin embedding
  Tensor<T> c_prev;
  std::vector<Tensor<T>> keys, values;  // per block, [step, d]

  static DecoderState begin(const DecoderConfig& cfg) {
    DecoderState s;
    s.c_prev = Tensor<T>::zeros({1, cfg.d_model});
    s.keys.resize(cfg.plan.num_blocks);
    s.values.resize(cfg.plan.num_blocks);
    return s;
  }
};

template <class T>
struct StepOutput {
  Tensor<T> logprobs;  // [V]
  std::map<std::size_t, nn::AttentionProbs> cross;  // block -> 1 x rows
};

// One decoding step; computes the same row as decode_teacher_forced would at
// position state.step, then advances the state with `token` via advance().
template <class T>
StepOutput<T> decode_step(DecoderState<T>& state, const Tensor<T>& c_i, const ProjectedCues<T>& cues,
                          const DecoderConfig& cfg, const ParamStore<T>& p) {
  const std::size_t d = cfg.d_model;
  if (state.keys.size() != cfg.plan.num_blocks) {
    throw ShapeError("decode_step: state built for " + std::to_string(state.keys.size()) + " blocks, plan has " +
                     std::to_string(cfg.plan.num_blocks));
  }
  auto c = reshape(c_i, {1, d});
  auto e = state.prev_token < 0 ? p.get("decoder.begin.w")
                                : embedding(p.get("decoder.embed.w"), std::vector<int>{state.prev_token});
  auto x = nn::apply_linear(p, "decoder.in", concat<T>({state.c_prev, e}, 1));
  x = add(x, slice(nn::sinusoidal_positions<T>(state.step + 1, d), 0, state.step, state.step + 1));

  StepOutput<T> out;
  for (std::size_t b = 1; b <= cfg.plan.num_blocks; ++b) {
    const auto name = decoder_block_name(b);
    auto h = nn::apply_layer_norm(p, name + ".self.ln", x);
    auto q = nn::apply_linear(p, name + ".self.q", h);
    auto k = nn::apply_linear(p, name + ".self.k", h);
    auto v = nn::apply_linear(p, name + ".self.v", h);
    auto& K = state.keys[b - 1];
    auto& V = state.values[b - 1];
    K = state.step == 0 ? k : concat<T>({K, k}, 0);
    V = state.step == 0 ? v : concat<T>({V, v}, 0);
    x = add(x, nn::apply_linear(p, name + ".self.o", nn::attend(q, K, V, cfg.heads, nullptr, nullptr)));
    const BlockRole role = cfg.plan.role(b);
    if (role != BlockRole::kInitial) {
      nn::AttentionProbs probs;
      h = nn::apply_layer_norm(p, name + ".cross.ln", x);
      x = add(x, nn::apply_attention(p, name + ".cross", h, detail::cue_for(role, cues), cfg.heads, nullptr, &probs));
      out.cross[b] = std::move(probs);
    }
    x = add(x, nn::apply_ffn(p, name + ".ffn", x, nn::ForwardContext{}));
  }
  x = nn::apply_layer_norm(p, "decoder.ln_out", x);
  x = add(x, nn::apply_linear(p, "decoder.acoustic", c));
  out.logprobs = reshape(log_softmax(nn::apply_linear(p, "decoder.out", x)), {p.get("decoder.out.b").dim(0)});
  state.c_prev = c;
  return out;
}

template <class T>
void advance(DecoderState<T>& state, int token) {
  state.prev_token = token;
  state.step += 1;
}

}  // namespace vilas
