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

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "vilas/frontend.hpp"
#include "vilas/perception.hpp"

namespace vilas {

// ---------------------------------------------------------------- vocabulary

inline constexpr int kPad = 0, kEos = 1, kBos = 2, kUnk = 3;
inline const std::vector<std::string> kReservedTokens = {"[PAD]", "[EOS]", "[BOS]", "[UNK]"};

class Vocabulary {
 public:
  Vocabulary() : tokens_(kReservedTokens) { reindex(); }
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < kReservedTokens.size(); ++i) {
      if (i >= tokens_.size() || tokens_[i] != kReservedTokens[i]) {
        throw FormatError("vocabulary: id " + std::to_string(i) + " must be " + kReservedTokens[i]);
      }
    }
    reindex();
    if (index_.size() != tokens_.size()) throw FormatError("vocabulary: duplicate tokens");
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeError("vocabulary file not found: " + path.string());
    std::vector<std::string> toks;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      toks.push_back(line);
    }
    return Vocabulary(std::move(toks));
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    for (const auto& t : tokens_) out << t << '\n';
    if (!out) throw RuntimeError("failed writing " + path.string());
  }

  void add(const std::string& tok) {
    if (index_.count(tok)) return;
    index_[tok] = static_cast<int>(tokens_.size());
    tokens_.push_back(tok);
  }

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw Error("vocabulary: bad id " + std::to_string(id));
    return tokens_[id];
  }
  std::vector<int> encode(const std::string& text) const {
    std::vector<int> out;
    for (const auto& w : split_whitespace(text)) out.push_back(id(w));
    return out;
  }
  std::string decode(const std::vector<int>& ids) const {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + token(ids[i]);
    return s;
  }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
  }
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

// ----------------------------------------------------------------- manifests

struct ManifestRecord {
  std::string id;
  std::string features;
  std::string transcript;
  std::optional<std::string> image_feat;
  std::optional<std::string> context_text;

  bool is_multimodal() const { return image_feat.has_value() || context_text.has_value(); }
  bool operator==(const ManifestRecord&) const = default;
};

struct CorpusManifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;  // relative paths resolve against this

  std::size_t size() const { return records.size(); }
  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path q(p);
    return q.is_relative() ? base_dir / q : q;
  }
};

inline nlohmann::json to_json(const ManifestRecord& r) {
  nlohmann::json j = {{"id", r.id}, {"features", r.features}, {"transcript", r.transcript}};
  if (r.image_feat) j["image_feat"] = *r.image_feat;
  if (r.context_text) j["context_text"] = *r.context_text;
  return j;
}

// Parses JSON lines; with check_files, every referenced path must exist.
inline CorpusManifest read_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("manifest not found: " + path.string());
  CorpusManifest m;
  m.base_dir = path.parent_path();
  std::set<std::string> ids;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    auto str = [&](const char* key, bool required) -> std::optional<std::string> {
      if (!j.contains(key) || j[key].is_null()) {
        if (required) throw FormatError(where + ": missing \"" + key + "\"");
        return std::nullopt;
      }
      if (!j[key].is_string()) throw FormatError(where + ": \"" + key + "\" must be a string");
      return j[key].get<std::string>();
    };
    ManifestRecord r{*str("id", true), *str("features", true), *str("transcript", true), str("image_feat", false),
                     str("context_text", false)};
    if (!ids.insert(r.id).second) throw FormatError(where + ": duplicate id " + r.id);
    if (check_files) {
      if (!std::filesystem::exists(m.resolve(r.features))) {
        throw RuntimeError(where + ": features file missing: " + m.resolve(r.features).string());
      }
      if (r.image_feat && !std::filesystem::exists(m.resolve(*r.image_feat))) {
        throw RuntimeError(where + ": image_feat file missing: " + m.resolve(*r.image_feat).string());
      }
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void write_manifest(const std::filesystem::path& path, const CorpusManifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  for (const auto& r : m.records) out << to_json(r).dump() << '\n';
  if (!out) throw RuntimeError("failed writing " + path.string());
}

// K = min(Ng, Nm) records drawn without replacement from each side, then
// shuffled together. Paths are made absolute so the result can live anywhere.
inline CorpusManifest mix(const CorpusManifest& generic, const CorpusManifest& multimodal, std::uint64_t seed) {
  if (generic.size() == 0 || multimodal.size() == 0) throw ConfigError("mix: empty manifest");
  const std::size_t K = std::min(generic.size(), multimodal.size());
  Rng rng(seed);
  auto draw = [&](const CorpusManifest& src) {
    std::vector<std::size_t> idx(src.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx.begin(), idx.end());
    std::vector<ManifestRecord> out;
    for (std::size_t i = 0; i < K; ++i) {
      ManifestRecord r = src.records[idx[i]];
      r.features = std::filesystem::absolute(src.resolve(r.features)).lexically_normal().string();
      if (r.image_feat) r.image_feat = std::filesystem::absolute(src.resolve(*r.image_feat)).lexically_normal().string();
      out.push_back(std::move(r));
    }
    return out;
  };
  CorpusManifest out;
  out.records = draw(generic);
  auto mm = draw(multimodal);
  std::set<std::string> ids;
  for (const auto& r : out.records) ids.insert(r.id);
  for (auto& r : mm) {
    if (!ids.insert(r.id).second) throw ConfigError("mix: id " + r.id + " appears in both manifests");
    out.records.push_back(std::move(r));
  }
  rng.shuffle(out.records.begin(), out.records.end());
  return out;
}

// ----------------------------------------------------------------- utterances

struct Utterance {
  std::string id;
  FeatureSequence feat;
  std::vector<int> target;
  MultimodalCues cues;
};

enum class CueMode { kAll, kOff, kVisual, kLinguistic };

inline CueMode parse_cue_mode(const std::string& s) {
  if (s == "all" || s == "on") return CueMode::kAll;
  if (s == "off") return CueMode::kOff;
  if (s == "visual") return CueMode::kVisual;
  if (s == "linguistic") return CueMode::kLinguistic;
  throw ConfigError("cue mode must be one of all|on|off|visual|linguistic, got '" + s + "'");
}

inline const char* cue_mode_name(CueMode m) {
  switch (m) {
    case CueMode::kAll: return "all";
    case CueMode::kOff: return "off";
    case CueMode::kVisual: return "visual";
    case CueMode::kLinguistic: return "linguistic";
  }
  return "?";
}

// Replaces the masked modalities by placeholders.
inline MultimodalCues apply_cue_mode(const MultimodalCues& cues, CueMode mode) {
  MultimodalCues out = cues;
  if (mode == CueMode::kOff || mode == CueMode::kLinguistic) {
    out.visual = CueSequence::placeholder(Modality::kVisual, cues.visual.dim());
  }
  if (mode == CueMode::kOff || mode == CueMode::kVisual) {
    out.linguistic = CueSequence::placeholder(Modality::kLinguistic, cues.linguistic.dim());
  }
  return out;
}

inline std::vector<Utterance> load_utterances(const CorpusManifest& m, const Vocabulary& vocab,
                                              const VisualProvider& visual, const LinguisticProvider& linguistic) {
  std::vector<Utterance> out;
  out.reserve(m.size());
  for (const auto& r : m.records) {
    Utterance u;
    u.id = r.id;
    u.feat = read_feature_file(m.resolve(r.features));
    u.feat.source_id = r.id;
    u.target = vocab.encode(r.transcript);
    if (u.target.empty()) throw FormatError("utterance " + r.id + ": empty transcript");
    std::optional<std::string> img;
    if (r.image_feat) img = visual.kind() == ProviderKind::kPrecomputed ? m.resolve(*r.image_feat).string() : *r.image_feat;
    u.cues.visual = visual.provide(img);
    u.cues.linguistic = linguistic.provide(r.context_text);
    out.push_back(std::move(u));
  }
  return out;
}

// ------------------------------------------------------------ synthetic task
//
// Tokens: the four reserved ids, plain tokens t0.., then ambiguous pairs
// p<k>a / p<k>b. Each plain token and each pair owns a frames_per_token x
// feat_dim prototype; both members of a pair share it. An utterance commits
// to one member per pair. Its visual cue has 1 + num_pairs rows: row 0 carries
// the sign (+1 member a, -1 member b, 0 pair absent) of every pair in dims
// [0, P); row 1 + k repeats pair k's sign in dim k and a one-hot pair id in
// dim P + k. context_text, when present, lists the chosen member of every pair
// that occurs. With twins, every other utterance is a copy of the previous one
// with all members flipped (identical features, opposite cues).

struct SyntheticTaskSpec {
  std::size_t num_plain = 8;
  std::size_t num_pairs = 4;
  std::size_t frames_per_token = 8;
  std::size_t feat_dim = 16;
  double noise_sigma = 0.0;
  std::size_t cue_dim = 16;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  double ambiguous_prob = 0.4;
  std::size_t plain_begin = 0;  // plain tokens drawn from [plain_begin, plain_end)
  std::size_t plain_end = 0;    // 0: num_plain
  bool multimodal = true;       // false: no cues written, no ambiguous tokens
  double visual_prob = 1.0;
  double context_prob = 0.5;
  bool twins = false;
  std::uint64_t prototype_seed = 1234;
  std::string id_prefix = "utt";

  std::size_t plain_stop() const { return plain_end == 0 ? num_plain : plain_end; }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (num_plain == 0) out.push_back("synth: num_plain must be positive");
    if (frames_per_token == 0) out.push_back("synth: frames_per_token must be positive");
    if (feat_dim == 0) out.push_back("synth: feat_dim must be positive");
    if (noise_sigma < 0) out.push_back("synth: noise_sigma must be >= 0");
    if (cue_dim < 2 * num_pairs || cue_dim == 0) out.push_back("synth: cue_dim must be >= 2 * num_pairs and positive");
    if (min_len == 0 || min_len > max_len) out.push_back("synth: need 1 <= min_len <= max_len");
    if (ambiguous_prob < 0 || ambiguous_prob > 1) out.push_back("synth: ambiguous_prob must be in [0, 1]");
    if (ambiguous_prob > 0 && num_pairs == 0 && multimodal) out.push_back("synth: ambiguous_prob > 0 needs pairs");
    if (plain_begin >= plain_stop() || plain_stop() > num_plain) out.push_back("synth: bad plain token range");
    if (visual_prob < 0 || visual_prob > 1 || context_prob < 0 || context_prob > 1) {
      out.push_back("synth: cue probabilities must be in [0, 1]");
    }
    if (id_prefix.empty()) out.push_back("synth: id_prefix must be non-empty");
    return out;
  }
};

inline std::string plain_token(std::size_t k) { return "t" + std::to_string(k); }
inline std::string pair_token(std::size_t k, bool member_b) {
  return "p" + std::to_string(k) + (member_b ? "b" : "a");
}

inline Vocabulary synthetic_vocabulary(const SyntheticTaskSpec& spec) {
  Vocabulary v;
  for (std::size_t k = 0; k < spec.num_plain; ++k) v.add(plain_token(k));
  for (std::size_t k = 0; k < spec.num_pairs; ++k) {
    v.add(pair_token(k, false));
    v.add(pair_token(k, true));
  }
  return v;
}

// Acoustic class prototype, a pure function of (prototype_seed, class name).
inline Matrix synthetic_prototype(const SyntheticTaskSpec& spec, const std::string& cls) {
  Matrix m(spec.frames_per_token, spec.feat_dim);
  Rng rng(mix_seed(spec.prototype_seed, "proto:" + cls));
  for (auto& x : m.data) x = static_cast<float>(rng.normal());
  return m;
}

struct SyntheticCorpus {
  CorpusManifest manifest;
  Vocabulary vocab;
  std::filesystem::path manifest_path;
};

namespace detail {

struct SynthToken {
  bool ambiguous;
  std::size_t index;  // plain token or pair index
};

}  // namespace detail

// Writes <out>/vocab.txt, <out>/manifest.jsonl, <out>/feats/*.vlsf and
// <out>/cues/*.vlsf.
inline SyntheticCorpus generate_synthetic(const SyntheticTaskSpec& spec, std::size_t n_utts, std::uint64_t seed,
                                          const std::filesystem::path& out_dir) {
  auto probs = spec.problems();
  if (!probs.empty()) {
    std::string msg = "invalid synthetic spec:";
    for (auto& p : probs) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  SyntheticCorpus corpus;
  corpus.vocab = synthetic_vocabulary(spec);
  std::map<std::string, Matrix> protos;
  auto proto = [&](const std::string& cls) -> const Matrix& {
    auto it = protos.find(cls);
    if (it == protos.end()) it = protos.emplace(cls, synthetic_prototype(spec, cls)).first;
    return it->second;
  };

  std::filesystem::create_directories(out_dir / "feats");
  if (spec.multimodal) std::filesystem::create_directories(out_dir / "cues");
  corpus.manifest.base_dir = out_dir;
  Rng rng(seed);
  const std::size_t P = spec.num_pairs;
  const double amb = spec.multimodal && P > 0 ? spec.ambiguous_prob : 0.0;

  std::vector<detail::SynthToken> seq;
  std::vector<bool> member_b(P, false);
  Matrix frames;
  bool has_visual = false, has_context = false;
  for (std::size_t n = 0; n < n_utts; ++n) {
    const bool twin = spec.twins && n % 2 == 1;
    if (twin) {
      for (std::size_t k = 0; k < P; ++k) member_b[k] = !member_b[k];
    } else {
      seq.clear();
      const auto len = static_cast<std::size_t>(rng.randint(static_cast<std::int64_t>(spec.min_len),
                                                            static_cast<std::int64_t>(spec.max_len)));
      for (std::size_t i = 0; i < len; ++i) {
        if (amb > 0 && rng.bernoulli(amb)) {
          seq.push_back({true, static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(P) - 1))});
        } else {
          seq.push_back({false, static_cast<std::size_t>(rng.randint(static_cast<std::int64_t>(spec.plain_begin),
                                                                     static_cast<std::int64_t>(spec.plain_stop()) - 1))});
        }
      }
      for (std::size_t k = 0; k < P; ++k) member_b[k] = rng.bernoulli(0.5);
      frames = Matrix(len * spec.frames_per_token, spec.feat_dim);
      for (std::size_t i = 0; i < len; ++i) {
        const auto& pr = proto(seq[i].ambiguous ? "pair" + std::to_string(seq[i].index) : plain_token(seq[i].index));
        for (std::size_t r = 0; r < spec.frames_per_token; ++r)
          for (std::size_t c = 0; c < spec.feat_dim; ++c) {
            float v = pr(r, c);
            if (spec.noise_sigma > 0) v += static_cast<float>(spec.noise_sigma * rng.normal());
            frames(i * spec.frames_per_token + r, c) = v;
          }
      }
      has_visual = spec.multimodal && rng.bernoulli(spec.visual_prob);
      has_context = spec.multimodal && rng.bernoulli(spec.context_prob);
    }

    ManifestRecord rec;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "%06zu", n);
    rec.id = spec.id_prefix + "-" + idbuf;
    std::vector<bool> present(P, false);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto& t = seq[i];
      if (t.ambiguous) present[t.index] = true;
      rec.transcript += (i ? " " : "") + (t.ambiguous ? pair_token(t.index, member_b[t.index]) : plain_token(t.index));
    }
    rec.features = "feats/" + rec.id + ".vlsf";
    write_matrix_file(out_dir / rec.features, frames);
    if (has_visual) {
      Matrix cue(1 + P, spec.cue_dim);
      for (std::size_t k = 0; k < P; ++k) {
        const float sign = present[k] ? (member_b[k] ? -1.0f : 1.0f) : 0.0f;
        cue(0, k) = sign;
        cue(1 + k, k) = sign;
        cue(1 + k, P + k) = 1.0f;
      }
      rec.image_feat = "cues/" + rec.id + ".img.vlsf";
      write_matrix_file(out_dir / *rec.image_feat, cue);
    }
    if (has_context) {
      std::string ctx;
      for (std::size_t k = 0; k < P; ++k)
        if (present[k]) ctx += (ctx.empty() ? "" : " ") + pair_token(k, member_b[k]);
      rec.context_text = ctx;
    }
    corpus.manifest.records.push_back(std::move(rec));
  }
  corpus.vocab.save(out_dir / "vocab.txt");
  corpus.manifest_path = out_dir / "manifest.jsonl";
  write_manifest(corpus.manifest_path, corpus.manifest);
  return corpus;
}

}  // namespace vilas
