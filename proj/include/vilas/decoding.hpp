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
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vilas/data.hpp"
#include "vilas/model.hpp"

namespace vilas {

struct Hypothesis {
  std::vector<int> tokens;
  std::vector<double> step_logprobs;
  double total_logprob = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> boundaries;  // encoder frames
  std::size_t visual_keys = 0, linguistic_keys = 0;
  std::vector<double> visual_attention;      // I x visual_keys
  std::vector<double> linguistic_attention;  // I x linguistic_keys
  bool empty_fire = false;                   // CIF fired nothing
  bool attention_captured = false;
};

// Beam comparison: higher score first, then lexicographically smaller tokens.
inline bool hypothesis_before(double sa, const std::vector<int>& ta, double sb, const std::vector<int>& tb) {
  if (sa != sb) return sa > sb;
  return ta < tb;
}

// Fixed-length beam search. `step(state, i)` returns log-probs for step i
// given a state; `advance(state, token)` returns the successor state.
template <class State, class StepFn, class AdvanceFn>
std::vector<std::pair<std::vector<int>, std::vector<double>>> fixed_length_beam(
    State init, std::size_t steps, std::size_t beam, StepFn step, AdvanceFn advance) {
  if (beam == 0) throw ConfigError("beam size must be >= 1");
  struct Item {
    std::vector<int> tokens;
    std::vector<double> lps;
    double score;
    State state;
  };
  std::vector<Item> live;
  live.push_back({{}, {}, 0.0, std::move(init)});
  for (std::size_t i = 0; i < steps; ++i) {
    struct Cand {
      std::size_t parent;
      int token;
      double lp, score;
      const std::vector<int>* prefix;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const std::vector<double> lp = step(live[h].state, i);
      std::vector<int> order(lp.size());
      std::iota(order.begin(), order.end(), 0);
      const std::size_t keep = std::min(beam, lp.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                        [&](int a, int b) { return lp[a] != lp[b] ? lp[a] > lp[b] : a < b; });
      for (std::size_t c = 0; c < keep; ++c)
        cands.push_back({h, order[c], lp[order[c]], live[h].score + lp[order[c]], &live[h].tokens});
    }
    auto before = [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (*a.prefix != *b.prefix) return *a.prefix < *b.prefix;
      return a.token < b.token;
    };
    const std::size_t keep = std::min(beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), before);
    std::vector<Item> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& parent = live[cands[c].parent];
      Item it{parent.tokens, parent.lps, cands[c].score, advance(parent.state, cands[c].token)};
      it.tokens.push_back(cands[c].token);
      it.lps.push_back(cands[c].lp);
      next.push_back(std::move(it));
    }
    live = std::move(next);
  }
  std::vector<std::pair<std::vector<int>, std::vector<double>>> out;
  for (auto& it : live) out.emplace_back(std::move(it.tokens), std::move(it.lps));
  return out;
}

struct SearchOptions {
  std::size_t beam = 10;
  bool capture_attention = true;
};

// Decodes one utterance: unscaled CIF fixes I', then beam search over the
// decoder. Hypotheses are sorted best first.
template <class T>
std::vector<Hypothesis> beam_search(const ModelConfig& cfg, const ParamStore<T>& p, const FeatureSequence& feat,
                                    const MultimodalCues& cues, const SearchOptions& opts = {}) {
  NoGradGuard no_grad;
  auto ac = run_acoustics(cfg, p, to_tensor<T>(feat.frames), std::nullopt);
  const auto& C = ac.fired.integrated;
  const std::size_t I = ac.fired.length();
  if (I == 0) {
    Hypothesis h;
    h.empty_fire = true;
    return {h};
  }
  auto pc = project(cues, p);
  const std::size_t d = cfg.decoder.d_model;
  std::vector<Tensor<T>> rows;
  for (std::size_t i = 0; i < I; ++i) rows.push_back(slice(C, 0, i, i + 1));

  // The state is shared-by-copy; decode_step grows its caches, so each
  // expansion works on its own copy.
  auto step = [&](DecoderState<T>& s, std::size_t i) {
    auto out = decode_step(s, reshape(rows[i], {d}), pc, cfg.decoder, p);
    const auto& v = out.logprobs.values();
    return std::vector<double>(v.begin(), v.end());
  };
  auto adv = [](const DecoderState<T>& s, int tok) {
    DecoderState<T> n = s;
    advance(n, tok);
    return n;
  };
  auto raw = fixed_length_beam(DecoderState<T>::begin(cfg.decoder), I, opts.beam, step, adv);

  std::vector<Hypothesis> out;
  for (auto& [toks, lps] : raw) {
    Hypothesis h;
    h.tokens = toks;
    h.step_logprobs = lps;
    h.total_logprob = std::accumulate(lps.begin(), lps.end(), 0.0);
    h.boundaries = ac.fired.boundaries;
    out.push_back(std::move(h));
  }
  std::stable_sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return hypothesis_before(a.total_logprob, a.tokens, b.total_logprob, b.tokens);
  });
  if (opts.capture_attention) {
    for (auto& h : out) {
      auto tf = decode_teacher_forced(C, h.tokens, pc, cfg.decoder, p, {}, DecodeOptions{true, false});
      h.visual_keys = tf.attention->visual_keys;
      h.linguistic_keys = tf.attention->linguistic_keys;
      h.visual_attention = std::move(tf.attention->visual);
      h.linguistic_attention = std::move(tf.attention->linguistic);
      h.attention_captured = true;
    }
  }
  return out;
}

template <class T>
Hypothesis greedy_decode(const ModelConfig& cfg, const ParamStore<T>& p, const FeatureSequence& feat,
                         const MultimodalCues& cues, bool capture_attention = true) {
  return beam_search(cfg, p, feat, cues, SearchOptions{1, capture_attention}).front();
}

// ------------------------------------------------------------------ scoring

enum class EditOp { kMatch, kSub, kDel, kIns };

struct ErrorReport {
  std::size_t substitutions = 0, deletions = 0, insertions = 0, ref_length = 0;
  double rate = 0.0;

  std::size_t edits() const { return substitutions + deletions + insertions; }
};

// Minimal unit-cost alignment; ties resolve match/sub, then deletion, then
// insertion.
inline std::vector<EditOp> align_tokens(const std::vector<int>& ref, const std::vector<int>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> D((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return D[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]), at(i - 1, j) + 1, at(i, j - 1) + 1});
  std::vector<EditOp> ops;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1])) {
      ops.push_back(ref[i - 1] == hyp[j - 1] ? EditOp::kMatch : EditOp::kSub);
      --i, --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ops.push_back(EditOp::kDel);
      --i;
    } else {
      ops.push_back(EditOp::kIns);
      --j;
    }
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

inline ErrorReport error_rate(const std::vector<std::vector<int>>& refs, const std::vector<std::vector<int>>& hyps) {
  if (refs.empty()) throw ConfigError("error_rate: empty reference set");
  if (refs.size() != hyps.size()) {
    throw ShapeError("error_rate: " + std::to_string(refs.size()) + " references vs " + std::to_string(hyps.size()) +
                     " hypotheses");
  }
  ErrorReport r;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    r.ref_length += refs[k].size();
    for (auto op : align_tokens(refs[k], hyps[k])) {
      r.substitutions += op == EditOp::kSub;
      r.deletions += op == EditOp::kDel;
      r.insertions += op == EditOp::kIns;
    }
  }
  if (r.ref_length == 0) throw ConfigError("error_rate: references have zero total length");
  r.rate = static_cast<double>(r.edits()) / static_cast<double>(r.ref_length);
  return r;
}

inline ErrorReport error_rate(const std::vector<int>& ref, const std::vector<int>& hyp) {
  return error_rate(std::vector<std::vector<int>>{ref}, std::vector<std::vector<int>>{hyp});
}

inline nlohmann::json to_json(const ErrorReport& r) {
  return {{"substitutions", r.substitutions}, {"deletions", r.deletions}, {"insertions", r.insertions},
          {"ref_length", r.ref_length}, {"rate", r.rate}};
}

// ---------------------------------------------------------------- alignment

struct FeatureMeta {
  std::size_t num_frames = 0;
  std::size_t subsampling_factor = 1;
  double frame_shift_ms = 10.0;
};

inline constexpr const char* kAlignmentFormat = "vilas-alignment";

namespace detail {

inline nlohmann::json top_k_row(const std::vector<double>& m, std::size_t keys, std::size_t row, std::size_t k) {
  std::vector<std::size_t> idx(keys);
  std::iota(idx.begin(), idx.end(), 0);
  const double* r = m.data() + row * keys;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return r[a] > r[b]; });
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < std::min(k, keys); ++i) out.push_back({{"row", idx[i]}, {"weight", r[idx[i]]}});
  return out;
}

}  // namespace detail

// Per-token frame spans in input frames (CIF boundaries times the
// subsampling factor, clipped to the utterance) and the top-k cue rows each
// token attended to.
inline nlohmann::json extract_alignment(const Hypothesis& hyp, const FeatureMeta& meta, const Vocabulary& vocab,
                                        const std::string& utt_id, std::size_t top_k = 3) {
  const std::size_t I = hyp.tokens.size();
  const bool has_v = hyp.visual_keys > 0, has_l = hyp.linguistic_keys > 0;
  if (I > 0 && !hyp.attention_captured) {
    throw RuntimeError("extract_alignment: hypothesis was decoded without attention capture");
  }
  if (hyp.boundaries.size() != I) throw ShapeError("extract_alignment: boundaries/tokens length mismatch");
  if ((has_v && hyp.visual_attention.size() != I * hyp.visual_keys) ||
      (has_l && hyp.linguistic_attention.size() != I * hyp.linguistic_keys)) {
    throw ShapeError("extract_alignment: attention map size does not match the token count");
  }
  nlohmann::json toks = nlohmann::json::array();
  const std::size_t s = meta.subsampling_factor;
  for (std::size_t i = 0; i < I; ++i) {
    const auto [b, e] = hyp.boundaries[i];
    const std::size_t fb = std::min(b * s, meta.num_frames), fe = std::min(e * s, meta.num_frames);
    nlohmann::json t = {{"index", i},
                        {"token", vocab.token(hyp.tokens[i])},
                        {"token_id", hyp.tokens[i]},
                        {"logprob", hyp.step_logprobs[i]},
                        {"encoder_span", {b, e}},
                        {"frame_span", {fb, fe}},
                        {"time_ms", {fb * meta.frame_shift_ms, fe * meta.frame_shift_ms}}};
    t["visual"] = has_v ? detail::top_k_row(hyp.visual_attention, hyp.visual_keys, i, top_k) : nlohmann::json::array();
    t["linguistic"] =
        has_l ? detail::top_k_row(hyp.linguistic_attention, hyp.linguistic_keys, i, top_k) : nlohmann::json::array();
    toks.push_back(std::move(t));
  }
  return {{"format", kAlignmentFormat},
          {"version", 1},
          {"utterance", utt_id},
          {"num_frames", meta.num_frames},
          {"subsampling_factor", s},
          {"frame_shift_ms", meta.frame_shift_ms},
          {"total_logprob", hyp.total_logprob},
          {"empty_fire", hyp.empty_fire},
          {"tokens", std::move(toks)}};
}

// Structural checks beyond the schema: ordered spans that overlap by at most
// one shared frame interval, clipped to the utterance, descending top-k lists
// with weights summing to at most 1.
inline std::vector<std::string> alignment_problems(const nlohmann::json& doc) {
  std::vector<std::string> out;
  auto fail = [&](const std::string& s) { out.push_back(s); };
  if (!doc.is_object() || doc.value("format", "") != kAlignmentFormat) {
    fail("format tag missing");
    return out;
  }
  if (!doc.contains("tokens") || !doc["tokens"].is_array()) {
    fail("tokens missing");
    return out;
  }
  const auto nf = doc.value("num_frames", std::size_t{0});
  std::size_t prev_b = 0, prev_e = 0;
  for (std::size_t i = 0; i < doc["tokens"].size(); ++i) {
    const auto& t = doc["tokens"][i];
    const std::string at = "token " + std::to_string(i) + ": ";
    const auto b = t["frame_span"][0].get<std::size_t>(), e = t["frame_span"][1].get<std::size_t>();
    const auto eb = t["encoder_span"][0].get<std::size_t>(), ee = t["encoder_span"][1].get<std::size_t>();
    if (eb >= ee) fail(at + "empty encoder span");
    if (b > e || e > nf) fail(at + "frame span outside utterance");
    if (i > 0) {
      if (b < prev_b || e < prev_e) fail(at + "spans not monotonic");
      if (eb + 1 < static_cast<std::size_t>(doc["tokens"][i - 1]["encoder_span"][1].get<std::size_t>())) {
        fail(at + "overlaps previous token by more than one encoder frame");
      }
    }
    prev_b = b, prev_e = e;
    for (const char* mod : {"visual", "linguistic"}) {
      double total = 0, last = 2;
      for (const auto& r : t[mod]) {
        const double w = r["weight"].get<double>();
        if (w > last + 1e-12) fail(at + mod + " top-k not descending");
        if (w < 0) fail(at + mod + " negative weight");
        last = w;
        total += w;
      }
      if (total > 1.0 + 1e-6) fail(at + mod + " weights sum above 1");
    }
  }
  return out;
}

// Binary PGM (P5) heat map of an I x keys attention matrix, one cell per
// `cell` x `cell` pixels, darker = higher weight.
inline void write_attention_pgm(const std::filesystem::path& path, const std::vector<double>& m, std::size_t rows,
                                std::size_t cols, std::size_t cell = 8) {
  if (rows * cols != m.size() || rows == 0 || cols == 0) throw ShapeError("write_attention_pgm: bad matrix");
  const std::size_t W = cols * cell, H = rows * cell;
  std::vector<unsigned char> px(W * H);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double v = std::clamp(m[(y / cell) * cols + x / cell], 0.0, 1.0);
      px[y * W + x] = static_cast<unsigned char>(std::lround(255.0 * (1.0 - v)));
    }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << "P5\n" << W << " " << H << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw RuntimeError("failed writing " + path.string());
}

}  // namespace vilas
