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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vilas/data.hpp"
#include "vilas/model.hpp"
#include "vilas/training.hpp"

extern char** environ;

namespace vilas {

struct DataConfig {
  std::string train_manifest;
  std::string dev_manifest;
  std::string test_manifest;
  std::string generic_manifest;     // mixed phase: D_m = mix(generic, multimodal)
  std::string multimodal_manifest;
  std::uint64_t mix_seed = 1;
  std::string vocab;
  std::string visual_provider = "precomputed";
  std::string linguistic_provider = "stub";
  std::size_t visual_stub_rows = 4;
  std::uint64_t provider_seed = 7;
};

struct EvalConfig {
  std::size_t beam = 10;
  std::string cues = "all";
  std::size_t top_k = 3;
  bool per_head = false;
  bool pgm = false;
};

struct RunConfig {
  std::string dtype = "float";
  ModelConfig model;
  TrainConfig train;
  PhasePlan plan;
  std::string train_cues = "all";
  std::string init_from;
  DataConfig data;
  EvalConfig eval;
  SyntheticTaskSpec synth;
  FbankConfig fbank;

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (dtype != "float" && dtype != "double") out.push_back("dtype must be float or double");
    for (auto& s : model.problems()) out.push_back(s);
    for (auto& s : train.problems()) out.push_back(s);
    for (const auto* p : {&data.visual_provider, &data.linguistic_provider})
      if (*p != "stub" && *p != "precomputed") out.push_back("data: providers must be stub or precomputed");
    if (eval.beam == 0) out.push_back("eval: beam must be >= 1");
    try {
      (void)parse_cue_mode(eval.cues);
    } catch (const ConfigError& e) {
      out.push_back(std::string("eval.cues: ") + e.what());
    }
    try {
      (void)parse_cue_mode(train_cues);
    } catch (const ConfigError& e) {
      out.push_back(std::string("train.cues: ") + e.what());
    }
    return out;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class V>
std::string fmt_value(const V& v) {
  if constexpr (std::is_same_v<V, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<V, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<V>) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
  } else {
    return std::to_string(v);
  }
}

template <class V>
V parse_value(const std::string& s) {
  if constexpr (std::is_same_v<V, bool>) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("expected a boolean, got '" + s + "'");
  } else if constexpr (std::is_same_v<V, std::string>) {
    return s;
  } else {
    std::istringstream in(s);
    V v{};
    in >> v;
    if (in.fail() || !in.eof() || (std::is_unsigned_v<V> && s.find('-') != std::string::npos)) {
      throw ConfigError("expected a number, got '" + s + "'");
    }
    return v;
  }
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace detail

// Key registry over a RunConfig: every accepted key has a setter and a
// printer, which gives validation of unknown keys and the config echo.
class ConfigBinder {
 public:
  explicit ConfigBinder(RunConfig& c) : c_(c) { bind_all(); }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : fields_) out.push_back(k);
    return out;
  }

  bool known(const std::string& key) const { return fields_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) {
    auto it = fields_.find(key);
    if (it == fields_.end()) throw ConfigError("unknown key '" + key + "'");
    it->second.set(value);
  }

  std::string get(const std::string& key) const { return fields_.at(key).get(); }

  std::string echo() const {
    std::string out;
    for (const auto& [k, f] : fields_) out += k + " = " + f.get() + "\n";
    return out;
  }

 private:
  struct Field {
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
  };

  template <class V>
  void bind(const std::string& key, V& ref) {
    fields_[key] = {[&ref](const std::string& s) { ref = detail::parse_value<V>(s); },
                    [&ref] { return detail::fmt_value(ref); }};
  }

  void bind_sizes(const std::string& key, std::vector<std::size_t>& ref) {
    fields_[key] = {[&ref](const std::string& s) {
                      ref.clear();
                      for (const auto& x : detail::split_list(s)) ref.push_back(detail::parse_value<std::size_t>(x));
                    },
                    [&ref] {
                      std::string o;
                      for (std::size_t i = 0; i < ref.size(); ++i) o += (i ? "," : "") + std::to_string(ref[i]);
                      return o;
                    }};
  }

  void bind_set(const std::string& key, std::set<std::size_t>& ref) {
    fields_[key] = {[&ref](const std::string& s) {
                      ref.clear();
                      for (const auto& x : detail::split_list(s)) ref.insert(detail::parse_value<std::size_t>(x));
                    },
                    [&ref] {
                      std::string o;
                      for (auto b : ref) o += (o.empty() ? "" : ",") + std::to_string(b);
                      return o;
                    }};
  }

  void bind_all() {
    auto& m = c_.model;
    bind("run.dtype", c_.dtype);
    bind("model.feat_dim", m.feat_dim);
    bind("model.vocab_size", m.vocab_size);
    bind("model.visual_dim", m.visual_dim);
    bind("model.linguistic_dim", m.linguistic_dim);
    bind("encoder.conv_out_channels", m.encoder.conv_out_channels);
    bind("encoder.conv_kernel", m.encoder.conv_kernel);
    bind("encoder.conv_stride", m.encoder.conv_stride);
    bind("encoder.num_blocks", m.encoder.num_blocks);
    bind("encoder.d_model", m.encoder.d_model);
    bind("encoder.d_ffn", m.encoder.d_ffn);
    bind("encoder.heads", m.encoder.heads);
    bind("encoder.depthwise_kernel", m.encoder.depthwise_kernel);
    bind_sizes("encoder.pool_after_blocks", m.encoder.pool_after_blocks);
    bind("cif.channels", m.cif.channels);
    bind("cif.kernel", m.cif.kernel);
    bind("cif.threshold", m.cif.threshold);
    bind("cif.tail_threshold", m.cif.tail_threshold);
    bind("cif.firing_cap_factor", m.cif.firing_cap_factor);
    bind("decoder.d_model", m.decoder.d_model);
    bind("decoder.d_ffn", m.decoder.d_ffn);
    bind("decoder.heads", m.decoder.heads);
    bind("decoder.num_blocks", m.decoder.plan.num_blocks);
    bind_set("decoder.visual_blocks", m.decoder.plan.visual);
    bind_set("decoder.linguistic_blocks", m.decoder.plan.linguistic);
    auto& t = c_.train;
    bind("train.lr", t.lr);
    bind("train.weight_decay", t.weight_decay);
    bind("train.beta1", t.beta1);
    bind("train.beta2", t.beta2);
    bind("train.adam_eps", t.adam_eps);
    bind("train.label_smoothing", t.label_smoothing);
    bind("train.ce_weight", t.weights.ce);
    bind("train.ctc_weight", t.weights.ctc);
    bind("train.qua_weight", t.weights.qua);
    bind("train.batch_size", t.batch_size);
    bind("train.max_epochs", t.max_epochs);
    bind("train.seed", t.seed);
    bind("train.dropout", t.dropout);
    bind("train.max_grad_norm", t.max_grad_norm);
    bind("train.spec_augment", t.spec_augment);
    bind("train.freq_masks", t.augment.num_freq_masks);
    bind("train.freq_mask_width", t.augment.max_freq_width);
    bind("train.time_masks", t.augment.num_time_masks);
    bind("train.time_mask_fraction", t.augment.max_time_width_fraction);
    bind("train.cues", c_.train_cues);
    bind("train.allow_uninit", c_.plan.allow_uninit);
    bind("train.init_from", c_.init_from);
    fields_["train.transfer_scope"] = {[this](const std::string& s) { c_.plan.transfer_scope = detail::split_list(s); },
                                       [this] {
                                         std::string o;
                                         for (const auto& x : c_.plan.transfer_scope) o += (o.empty() ? "" : ",") + x;
                                         return o;
                                       }};
    auto& d = c_.data;
    bind("data.train_manifest", d.train_manifest);
    bind("data.dev_manifest", d.dev_manifest);
    bind("data.test_manifest", d.test_manifest);
    bind("data.generic_manifest", d.generic_manifest);
    bind("data.multimodal_manifest", d.multimodal_manifest);
    bind("data.mix_seed", d.mix_seed);
    bind("data.vocab", d.vocab);
    bind("data.visual_provider", d.visual_provider);
    bind("data.linguistic_provider", d.linguistic_provider);
    bind("data.visual_stub_rows", d.visual_stub_rows);
    bind("data.provider_seed", d.provider_seed);
    auto& e = c_.eval;
    bind("eval.beam", e.beam);
    bind("eval.cues", e.cues);
    bind("eval.top_k", e.top_k);
    bind("eval.per_head", e.per_head);
    bind("eval.pgm", e.pgm);
    auto& s = c_.synth;
    bind("synth.num_plain", s.num_plain);
    bind("synth.num_pairs", s.num_pairs);
    bind("synth.frames_per_token", s.frames_per_token);
    bind("synth.feat_dim", s.feat_dim);
    bind("synth.noise_sigma", s.noise_sigma);
    bind("synth.cue_dim", s.cue_dim);
    bind("synth.min_len", s.min_len);
    bind("synth.max_len", s.max_len);
    bind("synth.ambiguous_prob", s.ambiguous_prob);
    bind("synth.plain_begin", s.plain_begin);
    bind("synth.plain_end", s.plain_end);
    bind("synth.multimodal", s.multimodal);
    bind("synth.visual_prob", s.visual_prob);
    bind("synth.context_prob", s.context_prob);
    bind("synth.twins", s.twins);
    bind("synth.prototype_seed", s.prototype_seed);
    bind("synth.id_prefix", s.id_prefix);
    auto& f = c_.fbank;
    bind("fbank.sample_rate", f.sample_rate);
    bind("fbank.window_ms", f.window_ms);
    bind("fbank.hop_ms", f.hop_ms);
    bind("fbank.num_mels", f.num_mels);
    bind("fbank.preemphasis", f.preemphasis);
    bind("fbank.low_hz", f.low_hz);
    bind("fbank.high_hz", f.high_hz);
  }

  RunConfig& c_;
  std::map<std::string, Field> fields_;
};

// Applies `section.key = value` lines (# comments, blank lines allowed).
// Every problem in the text is collected before throwing.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin,
                              std::vector<std::string>& errors) {
  ConfigBinder b(cfg);
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected 'section.key = value'");
      continue;
    }
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    try {
      b.set(key, value);
    } catch (const ConfigError& e) {
      errors.push_back(where + key + ": " + e.what());
    }
  }
}

inline constexpr const char* kEnvPrefix = "VILAS_";

// VILAS_<SECTION>__<KEY>=value, e.g. VILAS_TRAIN__LR=1e-3.
inline void apply_env_overrides(RunConfig& cfg, std::vector<std::string>& errors) {
  ConfigBinder b(cfg);
  std::vector<std::pair<std::string, std::string>> found;
  for (char** e = environ; e && *e; ++e) {
    std::string kv(*e);
    if (kv.rfind(kEnvPrefix, 0) != 0) continue;
    const auto eq = kv.find('=');
    std::string name = kv.substr(6, eq - 6);
    const auto sep = name.find("__");
    if (sep == std::string::npos) continue;
    std::string key = name.substr(0, sep) + "." + name.substr(sep + 2);
    for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    found.emplace_back(key, kv.substr(eq + 1));
  }
  std::sort(found.begin(), found.end());
  for (const auto& [key, value] : found) {
    try {
      b.set(key, value);
    } catch (const ConfigError& e) {
      errors.push_back("environment " + key + ": " + e.what());
    }
  }
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// File, then environment, then validation; throws one ConfigError listing
// everything that is wrong.
inline RunConfig load_run_config(const std::optional<std::filesystem::path>& path, bool use_env = true) {
  RunConfig cfg;
  std::vector<std::string> errors;
  if (path) {
    std::string text;
    try {
      text = read_text_file(*path);
    } catch (const ConfigError& e) {
      errors.push_back(e.what());
    }
    apply_config_text(cfg, text, path->string(), errors);
  }
  if (use_env) apply_env_overrides(cfg, errors);
  for (auto& p : cfg.problems()) {
    // vocab_size may still be resolved from the vocabulary file.
    if (cfg.model.vocab_size == 0 && p.find("vocab_size") != std::string::npos) continue;
    errors.push_back(p);
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

}  // namespace vilas
