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

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vilas/data.hpp"
#include "vilas/decoding.hpp"
#include "vilas/losses.hpp"
#include "vilas/model.hpp"

namespace vilas {

struct LossWeights {
  double ce = 1.0;
  double ctc = 0.5;
  double qua = 1.0;
};

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double label_smoothing = 0.1;
  LossWeights weights;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 10;
  std::uint64_t seed = 1;
  double dropout = 0.1;
  double max_grad_norm = 0.0;  // 0: no clipping
  bool spec_augment = true;
  SpecAugmentPolicy augment;

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (!(lr > 0)) out.push_back("train: lr must be positive");
    if (weight_decay < 0) out.push_back("train: weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) out.push_back("train: betas must be in [0, 1)");
    if (!(adam_eps > 0)) out.push_back("train: adam_eps must be positive");
    if (!(label_smoothing >= 0 && label_smoothing < 1)) out.push_back("train: label_smoothing must be in [0, 1)");
    if (weights.ce < 0 || weights.ctc < 0 || weights.qua < 0) out.push_back("train: loss weights must be >= 0");
    if (batch_size == 0) out.push_back("train: batch_size must be positive");
    if (dropout < 0 || dropout >= 1) out.push_back("train: dropout must be in [0, 1)");
    if (max_grad_norm < 0) out.push_back("train: max_grad_norm must be >= 0");
    if (augment.max_time_width_fraction < 0 || augment.max_time_width_fraction > 1) {
      out.push_back("train: augment time width fraction must be in [0, 1]");
    }
    return out;
  }
};

// ------------------------------------------------------------------ objective

template <class T>
struct LossComponents {
  Tensor<T> total;
  double ce = 0, ctc = 0, qua = 0;
  bool ctc_feasible = true;

  double total_value() const { return total.item(); }
};

// weights.ce * ce + weights.ctc * ctc + weights.qua * qua; an infeasible CTC
// term is dropped.
template <class T>
Tensor<T> combine_losses(const Tensor<T>& ce, const std::optional<Tensor<T>>& ctc, const Tensor<T>& qua,
                         const LossWeights& w) {
  auto total = add(scale(ce, static_cast<T>(w.ce)), scale(qua, static_cast<T>(w.qua)));
  if (ctc) total = add(total, scale(*ctc, static_cast<T>(w.ctc)));
  return total;
}

// Full objective for one utterance. Teacher forcing runs on scaled CIF
// weights; the quantity loss sees the raw ones.
template <class T>
LossComponents<T> total_loss(const ModelConfig& mcfg, const ParamStore<T>& p, const Tensor<T>& feat,
                             const std::vector<int>& target, const MultimodalCues& cues, const TrainConfig& tcfg,
                             const nn::ForwardContext& ctx = {}) {
  auto ac = run_acoustics(mcfg, p, feat, target.size(), ctx);
  if (ac.fired.length() != target.size()) {
    throw NumericError("total_loss: scaled CIF fired " + std::to_string(ac.fired.length()) + " steps for " +
                       std::to_string(target.size()) + " tokens");
  }
  auto pc = project(cues, p);
  auto dec = decode_teacher_forced(ac.fired.integrated, target, pc, mcfg.decoder, p, ctx);
  LossComponents<T> out;
  auto ce = ce_label_smoothed(dec.logprobs, target, tcfg.label_smoothing);
  auto ctc = ctc_loss(ctc_head(ac.states, p), target);
  auto qua = quantity_loss(ac.weights, target.size());
  out.ce = ce.item();
  out.qua = qua.item();
  out.ctc_feasible = ctc.feasible;
  out.ctc = ctc.feasible ? ctc.loss.item() : 0.0;
  out.total = combine_losses(ce, ctc.feasible ? std::optional<Tensor<T>>(ctc.loss) : std::nullopt, qua, tcfg.weights);
  return out;
}

// ------------------------------------------------------------------ optimizer

// Adam with decoupled weight decay: p -= lr * wd * p, then the Adam step.
// Moments live in double. Parameters without a gradient this step are left
// untouched (no decay, no moment update).
template <class T>
class AdamW {
 public:
  std::size_t steps() const { return t_; }

  void step(ParamStore<T>& params, const TrainConfig& cfg) {
    bool any = false;
    for (auto& [_, p] : params) any = any || p.has_grad();
    if (!any) throw RuntimeError("optimizer_step: no parameter has a gradient");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    double clip = 1.0;
    if (cfg.max_grad_norm > 0) {
      double sq = 0;
      for (auto& [_, p] : params)
        if (p.has_grad())
          for (T g : p.grad()) sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg.max_grad_norm) clip = cfg.max_grad_norm / norm;
    }
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      auto& m = m_[name];
      auto& v = v_[name];
      m.resize(p.numel(), 0.0);
      v.resize(p.numel(), 0.0);
      auto data = p.mutable_data();
      const auto& g = p.grad();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double gi = clip * static_cast<double>(g[i]);
        double x = static_cast<double>(data[i]);
        x -= cfg.lr * cfg.weight_decay * x;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        x -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
        data[i] = static_cast<T>(x);
      }
    }
  }

  // Moments are stored as a checkpoint of doubles named m.<param>/v.<param>.
  void save(const std::filesystem::path& dir) const {
    ParamStore<double> s;
    for (const auto& [k, m] : m_) s.set("m." + k, Tensor<double>(Shape{m.size()}, m));
    for (const auto& [k, v] : v_) s.set("v." + k, Tensor<double>(Shape{v.size()}, v));
    save_checkpoint(s, dir);
    std::ofstream(dir / "adam.json") << nlohmann::json{{"steps", t_}}.dump() << '\n';
  }

  void load(const std::filesystem::path& dir) {
    auto s = load_checkpoint<double>(dir);
    m_.clear();
    v_.clear();
    for (const auto& [k, t] : s) {
      auto& dst = k.rfind("m.", 0) == 0 ? m_ : v_;
      dst[k.substr(2)] = t.values();
    }
    std::ifstream in(dir / "adam.json");
    if (!in) throw RuntimeError("optimizer state missing adam.json in " + dir.string());
    t_ = nlohmann::json::parse(in).at("steps").get<std::size_t>();
  }

 private:
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// ------------------------------------------------------------------ transfer

inline bool in_scope(const std::string& name, const std::vector<std::string>& scope) {
  for (const auto& s : scope)
    if (name.rfind(s, 0) == 0) return true;
  return false;
}

// Copies every in-scope parameter of `src` into `dst`. Both sides must hold
// exactly the same in-scope names and shapes; otherwise the unmatched names
// are listed in the error. Returns the copied names.
template <class T>
std::vector<std::string> transfer_params(ParamStore<T>& dst, const ParamStore<T>& src,
                                         const std::vector<std::string>& scope) {
  std::vector<std::string> unmatched, copied;
  for (const auto& [name, t] : src) {
    if (!in_scope(name, scope)) continue;
    if (!dst.contains(name)) {
      unmatched.push_back(name + " (only in source)");
    } else if (dst.get(name).shape() != t.shape()) {
      unmatched.push_back(name + " (shape " + shape_str(t.shape()) + " vs " + shape_str(dst.get(name).shape()) + ")");
    }
  }
  for (const auto& [name, _] : dst)
    if (in_scope(name, scope) && !src.contains(name)) unmatched.push_back(name + " (only in target)");
  if (!unmatched.empty()) {
    std::string msg = "transfer scope mismatch:";
    for (const auto& u : unmatched) msg += "\n  " + u;
    throw ConfigError(msg);
  }
  for (const auto& [name, t] : src) {
    if (!in_scope(name, scope)) continue;
    dst.set(name, Tensor<T>(t.shape(), t.values(), true));
    copied.push_back(name);
  }
  if (copied.empty()) throw ConfigError("transfer scope matched no parameters");
  return copied;
}

// --------------------------------------------------------------------- phase

enum class Phase { kPretrain, kMixed };

struct PhasePlan {
  Phase phase = Phase::kPretrain;
  std::optional<std::filesystem::path> init_from;
  std::vector<std::string> transfer_scope{"encoder.", "cif."};
  bool allow_uninit = false;
  CueMode cues = CueMode::kAll;  // pretraining always uses placeholders
};

struct EpochRecord {
  std::size_t epoch = 0;
  double ce = 0, ctc = 0, qua = 0, total = 0;
  std::optional<double> dev_error_rate;
  double wall_ms = 0;
  std::size_t steps = 0;
  std::size_t ctc_skipped = 0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},
            {"ce", ce},
            {"ctc", ctc},
            {"qua", qua},
            {"total", total},
            {"dev_error_rate", dev_error_rate ? nlohmann::json(*dev_error_rate) : nlohmann::json(nullptr)},
            {"wall_ms", wall_ms},
            {"steps", steps},
            {"ctc_skipped", ctc_skipped}};
  }
};

struct StepStats {
  double ce = 0, ctc = 0, qua = 0, total = 0;
  std::size_t ctc_skipped = 0;
};

// Owns parameters and optimizer state for one training run.
template <class T>
class Trainer {
 public:
  Trainer(ModelConfig mcfg, TrainConfig tcfg, ParamStore<T> params)
      : mcfg_(std::move(mcfg)), tcfg_(std::move(tcfg)), params_(std::move(params)) {}

  const ModelConfig& model_config() const { return mcfg_; }
  const TrainConfig& train_config() const { return tcfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  AdamW<T>& optimizer() { return opt_; }
  std::size_t epoch() const { return epoch_; }
  void set_epoch(std::size_t e) { epoch_ = e; }

  // One optimizer step on the mean loss of `batch`. Each utterance gets its
  // own graph; gradients accumulate in batch order.
  StepStats train_step(const std::vector<const Utterance*>& batch, CueMode mode) {
    params_.zero_grad();
    StepStats st;
    const T inv = static_cast<T>(1.0 / static_cast<double>(batch.size()));
    for (const Utterance* u : batch) {
      Rng rng(mix_seed(tcfg_.seed, "step:" + std::to_string(opt_.steps()) + ":" + u->id));
      nn::ForwardContext ctx{true, tcfg_.dropout, &rng};
      FeatureSequence feat = u->feat;
      if (tcfg_.spec_augment) {
        SpecAugmentPolicy pol = tcfg_.augment;
        pol.seed = rng.next_u64();
        feat = spec_augment(feat, pol);
      }
      auto lc = total_loss(mcfg_, params_, to_tensor<T>(feat.frames), u->target, apply_cue_mode(u->cues, mode), tcfg_,
                           ctx);
      if (!lc.ctc_feasible) {
        ++st.ctc_skipped;
        std::cerr << "warning: CTC infeasible for " << u->id << " (term skipped)\n";
      }
      scale(lc.total, inv).backward();
      st.ce += lc.ce / static_cast<double>(batch.size());
      st.ctc += lc.ctc / static_cast<double>(batch.size());
      st.qua += lc.qua / static_cast<double>(batch.size());
      st.total += lc.total_value() / static_cast<double>(batch.size());
    }
    opt_.step(params_, tcfg_);
    return st;
  }

  // One pass over `data` in an epoch-seeded shuffled order.
  EpochRecord run_epoch(const std::vector<Utterance>& data, CueMode mode) {
    if (data.empty()) throw ConfigError("training corpus is empty");
    const auto t0 = std::chrono::steady_clock::now();
    ++epoch_;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(tcfg_.seed, "epoch:" + std::to_string(epoch_)));
    rng.shuffle(order.begin(), order.end());
    EpochRecord rec;
    rec.epoch = epoch_;
    for (std::size_t b = 0; b < order.size(); b += tcfg_.batch_size) {
      std::vector<const Utterance*> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + tcfg_.batch_size); ++k) batch.push_back(&data[order[k]]);
      auto st = train_step(batch, mode);
      rec.ce += st.ce;
      rec.ctc += st.ctc;
      rec.qua += st.qua;
      rec.total += st.total;
      rec.ctc_skipped += st.ctc_skipped;
      ++rec.steps;
    }
    for (double* v : {&rec.ce, &rec.ctc, &rec.qua, &rec.total}) *v /= static_cast<double>(rec.steps);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  void save(const std::filesystem::path& dir) const {
    save_checkpoint(params_, dir);
    opt_.save(dir / "optim");
    std::ofstream(dir / "trainer.json") << nlohmann::json{{"epoch", epoch_}}.dump() << '\n';
  }

  void resume(const std::filesystem::path& dir) {
    params_ = load_checkpoint<T>(dir);
    opt_.load(dir / "optim");
    std::ifstream in(dir / "trainer.json");
    if (!in) throw RuntimeError("resume: trainer.json missing in " + dir.string());
    epoch_ = nlohmann::json::parse(in).at("epoch").get<std::size_t>();
  }

 private:
  ModelConfig mcfg_;
  TrainConfig tcfg_;
  ParamStore<T> params_;
  AdamW<T> opt_;
  std::size_t epoch_ = 0;
};

// Corpus-level greedy error rate.
template <class T>
ErrorReport evaluate(const ModelConfig& cfg, const ParamStore<T>& p, const std::vector<Utterance>& data, CueMode mode,
                     std::size_t beam = 1) {
  std::vector<std::vector<int>> refs, hyps;
  for (const auto& u : data) {
    refs.push_back(u.target);
    hyps.push_back(beam_search(cfg, p, u.feat, apply_cue_mode(u.cues, mode), SearchOptions{beam, false}).front().tokens);
  }
  return error_rate(refs, hyps);
}

// Builds the starting parameters for a phase: fresh from the seed, then for
// the mixed phase the transfer scope copied from the initial checkpoint.
template <class T>
ParamStore<T> phase_init(const PhasePlan& plan, const ModelConfig& mcfg, std::uint64_t seed) {
  auto params = init_params<T>(mcfg, seed);
  if (plan.phase == Phase::kMixed) {
    if (!plan.init_from) {
      if (!plan.allow_uninit) {
        throw ConfigError("mixed phase needs an initial checkpoint (--init / train.init_from)");
      }
      return params;
    }
    if (!std::filesystem::exists(*plan.init_from / "meta.json")) {
      throw RuntimeError("initial checkpoint not found: " + plan.init_from->string());
    }
    transfer_params(params, load_checkpoint<T>(*plan.init_from), plan.transfer_scope);
  }
  return params;
}

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // ckpt/ and logs.jsonl go here
  bool resume = false;
  std::size_t dev_every = 1;  // 0: never decode the dev set
  std::function<void(const EpochRecord&)> on_epoch;
};

// Trains for tcfg.max_epochs epochs (counting from a resumed epoch). Writes
// ckpt/last after every epoch and appends one JSON line per epoch.
template <class T>
Trainer<T> run_phase(const PhasePlan& plan, const ModelConfig& mcfg, const TrainConfig& tcfg,
                     const std::vector<Utterance>& train, const std::vector<Utterance>* dev, const RunOptions& ro = {}) {
  const CueMode mode = plan.phase == Phase::kPretrain ? CueMode::kOff : plan.cues;
  Trainer<T> trainer(mcfg, tcfg, ParamStore<T>{});
  const bool resumed = ro.resume && ro.out_dir && std::filesystem::exists(*ro.out_dir / "ckpt" / "last" / "meta.json");
  if (resumed) {
    trainer.resume(*ro.out_dir / "ckpt" / "last");
    auto bad = shape_mismatches(mcfg, trainer.params());
    if (!bad.empty()) throw ConfigError("resume checkpoint does not match config: " + bad.front());
  } else {
    trainer.params() = phase_init<T>(plan, mcfg, tcfg.seed);
  }
  std::ofstream log;
  if (ro.out_dir) {
    std::filesystem::create_directories(*ro.out_dir / "ckpt");
    log.open(*ro.out_dir / "logs.jsonl", resumed ? std::ios::app : std::ios::trunc);
  }
  while (trainer.epoch() < tcfg.max_epochs) {
    auto rec = trainer.run_epoch(train, mode);
    if (dev && !dev->empty() && ro.dev_every && rec.epoch % ro.dev_every == 0) {
      rec.dev_error_rate = evaluate(mcfg, trainer.params(), *dev, mode).rate;
    }
    if (ro.out_dir) {
      trainer.save(*ro.out_dir / "ckpt" / "last");
      log << rec.to_json().dump() << '\n';
      log.flush();
    }
    if (ro.on_epoch) ro.on_epoch(rec);
  }
  return trainer;
}

}  // namespace vilas
