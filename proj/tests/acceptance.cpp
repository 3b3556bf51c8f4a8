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

// Acceptance suite: one PASS/FAIL line per criterion. `acceptance [N...]`
// runs a subset. Exit status is 0 only if every selected criterion passes.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "test_util.hpp"

using namespace vilas;
namespace fs = std::filesystem;
namespace vt = vilas::testing;

namespace {

// ---------------------------------------------------------------- tolerances
constexpr double kGradTol = 1e-4;         // finite-difference rel err, f64
constexpr double kGradBudgetS = 120.0;
constexpr double kCifExact = 1e-12;       // hand traces (binary rounding only)
constexpr int kCifRandomTrials = 1000;
constexpr double kCtcTol = 1e-10;
constexpr double kCtcBudgetS = 60.0;
constexpr int kBeamTrials = 100;
constexpr double kBeamScoreTol = 1e-9;
constexpr double kCueErrMax = 0.02;
constexpr double kNoCueErrMin = 0.10;
constexpr double kCueBudgetS = 15 * 60.0;
constexpr double kMixedRatioMax = 1.2;
constexpr double kMmOnlyRatioMin = 2.0;
constexpr double kOverfitFactor = 10.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

fs::path work_dir() {
  static const fs::path p = vt::fresh_dir("acceptance");
  return p;
}

MultimodalCues random_cues(std::size_t dim, std::size_t vrows, std::size_t lrows, Rng& rng) {
  MultimodalCues c{{Matrix(vrows, dim), Modality::kVisual, false}, {Matrix(lrows, dim), Modality::kLinguistic, false}};
  for (auto& v : c.visual.vectors.data) v = static_cast<float>(rng.normal());
  for (auto& v : c.linguistic.vectors.data) v = static_cast<float>(rng.normal());
  return c;
}

FeatureSequence random_features(std::size_t frames, std::size_t dim, Rng& rng) {
  FeatureSequence f;
  f.frames = Matrix(frames, dim);
  for (auto& x : f.frames.data) x = static_cast<float>(rng.normal());
  return f;
}

std::vector<std::pair<std::string, Tensor<double>>> scoped(ParamStore<double>& p,
                                                           std::initializer_list<const char*> prefixes) {
  std::vector<std::pair<std::string, Tensor<double>>> out;
  for (const char* pre : prefixes)
    for (auto& l : leaves_of(p, pre)) out.push_back(l);
  return out;
}

std::vector<std::vector<int>> all_sequences(std::size_t V, std::size_t I) {
  std::vector<std::vector<int>> out{{}};
  for (std::size_t i = 0; i < I; ++i) {
    std::vector<std::vector<int>> next;
    for (const auto& s : out)
      for (std::size_t v = 0; v < V; ++v) {
        auto t = s;
        t.push_back(static_cast<int>(v));
        next.push_back(std::move(t));
      }
    out = std::move(next);
  }
  return out;
}

// Model shared by the cue experiment, the beam monotonicity sweep and the
// alignment check.
ModelConfig small_asr(std::size_t vocab, std::size_t plan_blocks = 3) {
  ModelConfig m;
  m.feat_dim = 16;
  m.vocab_size = vocab;
  m.visual_dim = 16;
  m.linguistic_dim = 16;
  m.encoder.conv_out_channels = 4;
  m.encoder.num_blocks = 2;
  m.encoder.d_model = 32;
  m.encoder.d_ffn = 64;
  m.encoder.heads = 2;
  m.encoder.pool_after_blocks = {1};
  m.cif.channels = 32;
  m.decoder.d_model = 32;
  m.decoder.d_ffn = 64;
  m.decoder.heads = 2;
  m.decoder.plan = FusionPlan{plan_blocks, {2}, {3}};
  return m;
}

TrainConfig experiment_training(std::size_t epochs, std::uint64_t seed) {
  TrainConfig t;
  t.spec_augment = false;
  t.lr = 1e-3;
  t.max_epochs = epochs;
  t.batch_size = 8;
  t.dropout = 0.0;
  t.seed = seed;
  return t;
}

std::vector<Utterance> load(const SyntheticCorpus& c, const Vocabulary& vocab) {
  VisualProvider vp(ProviderKind::kPrecomputed, 16);
  LinguisticProvider lp(ProviderKind::kStub, 16, 7);
  return load_utterances(c.manifest, vocab, vp, lp);
}

// ------------------------------------------------------------- cue experiment

struct CueExperiment {
  ModelConfig model;
  std::vector<Utterance> test;
  Vocabulary vocab;
  ParamStore<float> with_cues, baseline;
  double seconds = 0;
};

const CueExperiment& cue_experiment() {
  static std::optional<CueExperiment> cache;
  if (cache) return *cache;
  const auto t0 = Clock::now();
  SyntheticTaskSpec s;
  s.num_plain = 8;
  s.num_pairs = 4;
  s.twins = true;  // each ambiguous utterance has an acoustically identical twin
  s.context_prob = 0.0;
  s.noise_sigma = 0.0;
  s.id_prefix = "tr";
  auto tr = generate_synthetic(s, 400, 11, work_dir() / "c5_train");
  s.id_prefix = "te";
  auto te = generate_synthetic(s, 100, 12, work_dir() / "c5_test");
  CueExperiment e;
  e.vocab = tr.vocab;
  e.model = small_asr(tr.vocab.size());
  auto train = load(tr, tr.vocab);
  e.test = load(te, tr.vocab);
  const auto tcfg = experiment_training(30, 1);
  PhasePlan plan;
  plan.phase = Phase::kMixed;
  plan.allow_uninit = true;
  plan.cues = CueMode::kAll;
  e.with_cues = run_phase<float>(plan, e.model, tcfg, train, nullptr).params();
  plan.cues = CueMode::kOff;
  e.baseline = run_phase<float>(plan, e.model, tcfg, train, nullptr).params();
  e.seconds = seconds_since(t0);
  cache = std::move(e);
  return *cache;
}

// ----------------------------------------------------------------- criterion 1

Outcome gradients() {
  const auto t0 = Clock::now();
  std::vector<std::pair<std::string, GradCheckReport>> reps;
  Rng rng(101);
  auto m = vt::tiny_model(6, 9, 5);
  auto p = init_params<double>(m, 7);

  {  // encoder block
    auto x = vt::random_tensor({5, 8}, rng, 1.0, true);
    auto probe = vt::random_tensor({5, 8}, rng);
    auto leaves = leaves_of(p, "encoder.block1.");
    leaves.emplace_back("x", x);
    reps.emplace_back("encoder block", grad_check(
        [&] { return sum(mul(conformer_block(x, p, "encoder.block1", m.encoder, {}), probe)); }, leaves, kGradTol));
  }
  {  // CIF head: weight predictor, scaling, integrate-and-fire, quantity loss
    AcousticStates<double> h;
    h.states = vt::random_tensor({7, 8}, rng, 1.0, true);
    const std::size_t I = 3;
    auto probe = vt::random_tensor({I, 8}, rng);
    auto leaves = leaves_of(p, "cif.");
    leaves.emplace_back("H", h.states);
    reps.emplace_back("cif head", grad_check(
        [&] {
          auto w = scale_weights(predict_weights(h, p, m.cif), I);
          auto fired = integrate_and_fire(h.states, *w.alpha_scaled);
          return add(sum(mul(fired.integrated, probe)), quantity_loss(w, I));
        },
        leaves, kGradTol));
  }
  auto C = vt::random_tensor({4, 8}, rng);
  auto cues = random_cues(5, 3, 4, rng);
  {  // decoder step (second step, so self-attention caches are involved)
    auto c1 = vt::random_tensor({1, 8}, rng, 1.0, true);
    auto probe = vt::random_tensor({9}, rng);
    auto leaves = scoped(p, {"decoder.", "perception."});
    leaves.emplace_back("c", c1);
    reps.emplace_back("decoder step", grad_check(
        [&] {
          auto st = DecoderState<double>::begin(m.decoder);
          auto pc = project(cues, p);
          (void)decode_step(st, slice(C, 0, 0, 1), pc, m.decoder, p);
          advance(st, 5);
          return sum(mul(decode_step(st, c1, pc, m.decoder, p).logprobs, probe));
        },
        leaves, kGradTol));
  }
  {  // cue projections
    auto probe_v = vt::random_tensor({3, 8}, rng), probe_l = vt::random_tensor({4, 8}, rng);
    reps.emplace_back("projections", grad_check(
        [&] {
          auto pc = project(cues, p);
          return add(sum(mul(pc.visual.vectors, probe_v)), sum(mul(pc.linguistic.vectors, probe_l)));
        },
        leaves_of(p, "perception."), kGradTol));
  }
  {  // label-smoothed CE
    auto x = vt::random_tensor({4, 9}, rng, 1.0, true);
    reps.emplace_back("ce", grad_check([&] { return ce_label_smoothed(log_softmax(x), {5, 6, 7, 4}, 0.1); },
                                       {{"logits", x}}, kGradTol));
  }
  {  // CTC, with a repeated label
    auto x = vt::random_tensor({7, 5}, rng, 1.0, true);
    reps.emplace_back("ctc", grad_check([&] { return ctc_loss(log_softmax(x), {0, 2, 2}).loss; }, {{"logits", x}},
                                        kGradTol));
  }
  {  // quantity loss through the weight predictor
    AcousticStates<double> h;
    h.states = vt::random_tensor({6, 8}, rng, 1.0, true);
    auto leaves = leaves_of(p, "cif.");
    leaves.emplace_back("H", h.states);
    reps.emplace_back("quantity", grad_check([&] { return quantity_loss(predict_weights(h, p, m.cif), 4); }, leaves,
                                             kGradTol));
  }
  Outcome o{true, ""};
  double worst = 0;
  std::string worst_name;
  std::size_t coords = 0;
  for (const auto& [name, r] : reps) {
    coords += r.coords_checked;
    if (!r.passed) {
      o.pass = false;
      o.detail += name + " failed at " + r.worst_leaf + "[" + std::to_string(r.worst_index) + "] ";
    }
    if (r.max_rel_err > worst) worst = r.max_rel_err, worst_name = name;
  }
  const double secs = seconds_since(t0);
  if (secs > kGradBudgetS) o.pass = false;
  o.detail += std::to_string(reps.size()) + " suites, " + std::to_string(coords) + " coords, max rel err " +
              fmt(worst, 3) + " (" + worst_name + ") tol " + fmt(kGradTol) + ", " + fmt(secs, 3) + " s";
  return o;
}

// ----------------------------------------------------------------- criterion 2

Outcome cif_traces() {
  Outcome o{true, ""};
  auto eye = [](std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return Tensor<double>(Shape{n, n}, std::move(v));
  };
  auto vec = [](std::vector<double> w) {
    const std::size_t n = w.size();
    return Tensor<double>(Shape{n}, std::move(w));
  };
  auto check = [&](const char* name, const std::vector<double>& w, const std::vector<std::vector<double>>& rows,
                   const std::vector<std::pair<std::size_t, std::size_t>>& bounds) {
    auto f = integrate_and_fire(eye(w.size()), vec(w));
    bool ok = f.length() == rows.size() && f.boundaries == bounds;
    for (std::size_t i = 0; ok && i < rows.size(); ++i)
      for (std::size_t u = 0; u < w.size(); ++u) ok = ok && std::abs(f.integrated.at(i, u) - rows[i][u]) <= kCifExact;
    if (!ok) o.pass = false, o.detail += std::string(name) + " trace mismatch; ";
  };
  check("(0.4,0.7,0.9,0.5)", {0.4, 0.7, 0.9, 0.5}, {{0.4, 0.6, 0, 0}, {0, 0.1, 0.9, 0}, {0, 0, 0, 0.5}},
        {{0, 2}, {1, 3}, {3, 4}});
  check("unit weights", {1, 1, 1}, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {{0, 1}, {1, 2}, {2, 3}});
  check("all 0.1", {0.1, 0.1, 0.1, 0.1}, {}, {});
  check("tail below threshold", {0.6, 0.6, 0.2}, {{0.6, 0.4, 0}}, {{0, 2}});

  // Random instances: random acoustic states through a random weight
  // predictor, scaled to a random target length.
  Rng rng(202);
  ParamStore<double> p;
  CifConfig cfg;
  cfg.channels = 6;
  create_cif_params(p, cfg, 5, 3);
  int mismatches = 0;
  NoGradGuard ng;
  for (int trial = 0; trial < kCifRandomTrials; ++trial) {
    const std::size_t U = 1 + rng.randint(0, 39);
    const std::size_t I = 1 + rng.randint(0, static_cast<int>(std::min<std::size_t>(2 * U, 60)) - 1);
    AcousticStates<double> h;
    h.states = vt::random_tensor({U, 5}, rng, 1.0 + 2.0 * rng.uniform(0, 1));
    auto w = scale_weights(predict_weights(h, p, cfg), I);
    auto f = integrate_and_fire(h.states, *w.alpha_scaled, cfg.threshold, cfg.tail_threshold, cfg.firing_cap_factor * U);
    if (f.length() != I) ++mismatches;
  }
  if (mismatches) o.pass = false;
  o.detail += "4 hand traces at " + fmt(kCifExact) + ", fired==|target| on " +
              std::to_string(kCifRandomTrials - mismatches) + "/" + std::to_string(kCifRandomTrials) + " random";
  return o;
}

// ----------------------------------------------------------------- criterion 3

Outcome ctc_exhaustive() {
  const auto t0 = Clock::now();
  Rng rng(303);
  std::size_t cases = 0, bad = 0;
  double worst = 0;
  NoGradGuard ng;
  for (std::size_t V = 1; V <= 3; ++V)
    for (std::size_t L = 0; L <= 3; ++L)
      for (const auto& tgt : all_sequences(V, L))
        for (std::size_t U = 1; U <= 6; ++U) {
          const std::size_t K = V + 1;
          auto lp = log_softmax(vt::random_tensor({U, K}, rng, 1.5)).detach();
          // Exhaustive sum over all K^U frame labelings.
          double total = 0;
          std::vector<std::size_t> path(U, 0);
          for (;;) {
            std::vector<int> out;
            std::size_t prev = K;
            for (auto s : path) {
              if (s != K - 1 && s != prev) out.push_back(static_cast<int>(s));
              prev = s;
            }
            if (out == tgt) {
              double acc = 0;
              for (std::size_t t = 0; t < U; ++t) acc += lp.at(t, path[t]);
              total += std::exp(acc);
            }
            std::size_t k = 0;
            while (k < U && ++path[k] == K) path[k++] = 0;
            if (k == U) break;
          }
          auto r = ctc_loss(lp, tgt);
          ++cases;
          if (total == 0.0) {
            if (r.feasible) ++bad;
            continue;
          }
          const double err = std::abs(r.loss.item() + std::log(total));
          worst = std::max(worst, err);
          if (!r.feasible || err > kCtcTol) ++bad;
        }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs <= kCtcBudgetS, std::to_string(cases - bad) + "/" + std::to_string(cases) +
                                               " cases, max |dp - exhaustive| " + fmt(worst, 3) + " tol " +
                                               fmt(kCtcTol) + ", " + fmt(secs, 3) + " s"};
}

// ----------------------------------------------------------------- criterion 4

Outcome beam_search_checks() {
  auto m = vt::tiny_model(6, 5, 4);
  auto p = init_params<double>(m, 2);
  p.get("cif.fc.b").mutable_data()[0] = 0.4;  // roughly 0.6 weight per encoder frame
  Rng rng(404);
  int decoded = 0, exact = 0, monotone_bad = 0, attempts = 0;
  while (decoded < kBeamTrials && attempts < 20 * kBeamTrials) {
    ++attempts;
    auto f = random_features(8 + 4 * rng.randint(0, 2), 6, rng);
    auto c = random_cues(4, 2, 3, rng);
    auto b1 = beam_search(m, p, f, c, {1, false});
    const std::size_t I = b1.front().tokens.size();
    if (I == 0 || I > 3) continue;
    ++decoded;
    auto b10 = beam_search(m, p, f, c, {10, false});
    if (b10.front().total_logprob < b1.front().total_logprob - kBeamScoreTol) ++monotone_bad;
    const auto wide = static_cast<std::size_t>(std::pow(5, I));
    auto full = beam_search(m, p, f, c, {wide, false});
    NoGradGuard ng;
    auto ac = run_acoustics(m, p, to_tensor<double>(f.frames), std::nullopt);
    auto pc = project(c, p);
    double best = -1e300;
    std::vector<int> arg;
    for (const auto& s : all_sequences(5, I)) {
      auto lp = decode_teacher_forced(ac.fired.integrated, s, pc, m.decoder, p).logprobs;
      double sc = 0;
      for (std::size_t i = 0; i < I; ++i) sc += lp.at(i, s[i]);
      if (sc > best) best = sc, arg = s;
    }
    if (full.front().tokens == arg && std::abs(full.front().total_logprob - best) <= kBeamScoreTol) ++exact;
  }
  // Beam-10 vs beam-1 on the trained cue model, both cue modes.
  const auto& e = cue_experiment();
  int trained = 0;
  for (const auto& u : e.test)
    for (CueMode mode : {CueMode::kAll, CueMode::kOff}) {
      const auto cues = apply_cue_mode(u.cues, mode);
      auto b1 = beam_search(e.model, e.with_cues, u.feat, cues, {1, false});
      auto b10 = beam_search(e.model, e.with_cues, u.feat, cues, {10, false});
      ++trained;
      if (b10.front().total_logprob < b1.front().total_logprob - kBeamScoreTol) ++monotone_bad;
    }
  const bool pass = decoded == kBeamTrials && exact == kBeamTrials && monotone_bad == 0;
  return {pass, "exhaustive argmax matched " + std::to_string(exact) + "/" + std::to_string(decoded) +
                    " random decodes; beam10 < beam1 in " + std::to_string(monotone_bad) + " of " +
                    std::to_string(decoded + trained) + " decodes"};
}

// ----------------------------------------------------------------- criterion 5

Outcome cues_help() {
  const auto& e = cue_experiment();
  const double with = evaluate(e.model, e.with_cues, e.test, CueMode::kAll).rate;
  const double without = evaluate(e.model, e.with_cues, e.test, CueMode::kOff).rate;
  const double base = evaluate(e.model, e.baseline, e.test, CueMode::kOff).rate;
  const bool pass = with <= kCueErrMax && without >= kNoCueErrMin && base >= kNoCueErrMin && e.seconds <= kCueBudgetS;
  return {pass, "cue model " + fmt(with) + " with cues (<= " + fmt(kCueErrMax) + "), " + fmt(without) +
                    " without (>= " + fmt(kNoCueErrMin) + "); cue-free baseline " + fmt(base) + "; " +
                    fmt(e.seconds, 3) + " s"};
}

// ----------------------------------------------------------------- criterion 6

Outcome mixed_robustness() {
  std::vector<double> mixed_ratio, mm_ratio;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    SyntheticTaskSpec g;
    g.num_plain = 12;
    g.num_pairs = 4;
    g.noise_sigma = 1.5;
    g.multimodal = false;
    g.ambiguous_prob = 0;
    SyntheticTaskSpec mm = g;
    mm.multimodal = true;
    mm.plain_end = 4;  // multimodal utterances cover only a slice of the plain vocabulary
    mm.ambiguous_prob = 0.4;
    mm.context_prob = 0.0;
    const auto root = work_dir() / ("c6_seed" + std::to_string(seed));
    g.id_prefix = "gtr";
    auto gtr = generate_synthetic(g, 400, seed * 10 + 1, root / "gtr");
    g.id_prefix = "gte";
    auto gte = generate_synthetic(g, 100, seed * 10 + 2, root / "gte");
    mm.id_prefix = "mtr";
    auto mtr = generate_synthetic(mm, 200, seed * 10 + 3, root / "mtr");
    auto dm = mix(gtr.manifest, mtr.manifest, seed);
    auto generic = load(gtr, gtr.vocab), test = load(gte, gtr.vocab);
    auto mmonly = load(mtr, gtr.vocab), mixed = load(SyntheticCorpus{dm, gtr.vocab, {}}, gtr.vocab);
    auto m = small_asr(gtr.vocab.size());
    const auto tcfg = experiment_training(20, seed);
    RunOptions ro;
    ro.out_dir = root / "pretrain";
    auto m1 = run_phase<float>(PhasePlan{}, m, tcfg, generic, nullptr, ro);
    const double e_generic = evaluate(m, m1.params(), test, CueMode::kOff).rate;
    PhasePlan mp;
    mp.phase = Phase::kMixed;
    mp.init_from = root / "pretrain" / "ckpt" / "last";
    const double e_mixed = evaluate(m, run_phase<float>(mp, m, tcfg, mixed, nullptr).params(), test, CueMode::kOff).rate;
    const double e_mm = evaluate(m, run_phase<float>(mp, m, tcfg, mmonly, nullptr).params(), test, CueMode::kOff).rate;
    const double denom = std::max(e_generic, 1e-9);
    mixed_ratio.push_back(e_mixed / denom);
    mm_ratio.push_back(e_mm / denom);
    per_seed += " seed" + std::to_string(seed) + " g/mix/mm " + fmt(e_generic, 3) + "/" + fmt(e_mixed, 3) + "/" +
                fmt(e_mm, 3) + ";";
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double mr = median(mixed_ratio), mo = median(mm_ratio);
  return {mr <= kMixedRatioMax && mo >= kMmOnlyRatioMin,
          "median mixed/generic " + fmt(mr, 3) + " (<= " + fmt(kMixedRatioMax) + "), mm-only/generic " + fmt(mo, 3) +
              " (>= " + fmt(kMmOnlyRatioMin) + ");" + per_seed};
}

// ----------------------------------------------------------------- criterion 7

double mean_total_loss(const ModelConfig& m, const ParamStore<float>& p, const std::vector<Utterance>& data,
                       const TrainConfig& t) {
  NoGradGuard ng;
  double s = 0;
  for (const auto& u : data) s += total_loss(m, p, to_tensor<float>(u.feat.frames), u.target, u.cues, t).total_value();
  return s / static_cast<double>(data.size());
}

Outcome fusion_overfit() {
  SyntheticTaskSpec s;
  s.num_plain = 6;
  s.num_pairs = 2;
  s.min_len = 3;
  s.max_len = 5;
  s.context_prob = 0.5;
  s.id_prefix = "ov";
  auto corpus = generate_synthetic(s, 8, 707, work_dir() / "c7");
  auto data = load(corpus, corpus.vocab);
  Outcome o{true, ""};
  double worst = 1e300;
  std::string worst_id;
  for (int k = 1; k <= 8; ++k) {
    const std::string id = "E" + std::to_string(k);
    auto m = small_asr(corpus.vocab.size());
    m.encoder.d_model = m.decoder.d_model = m.cif.channels = 16;
    m.encoder.d_ffn = m.decoder.d_ffn = 32;
    m.decoder.plan = FusionPlan::named(id);
    auto t = experiment_training(150, 7);
    t.lr = 3e-3;
    t.weight_decay = 0.0;
    PhasePlan plan;
    plan.phase = Phase::kMixed;
    plan.allow_uninit = true;
    const double before = mean_total_loss(m, init_params<float>(m, t.seed), data, t);
    const double after = mean_total_loss(m, run_phase<float>(plan, m, t, data, nullptr).params(), data, t);
    const double factor = before / after;
    if (factor < worst) worst = factor, worst_id = id;
    o.detail += id + " " + fmt(before, 3) + "->" + fmt(after, 3) + "; ";
    if (!(factor >= kOverfitFactor)) o.pass = false;
    const auto plan_k = FusionPlan::named(id);
    if (!(swap_fusion_order(swap_fusion_order(plan_k)) == plan_k) || !swap_fusion_order(plan_k).problems().empty()) {
      o.pass = false;
      o.detail += id + " swap round trip broken; ";
    }
  }
  o.detail += "worst decrease " + fmt(worst, 3) + "x (" + worst_id + ", >= " + fmt(kOverfitFactor) + "x)";
  return o;
}

// ----------------------------------------------------------------- criterion 8

int run_validator(const fs::path& dir) {
  const std::string cmd = std::string(VILAS_PYTHON) + " " + VILAS_VALIDATOR_PATH + " --schema " + VILAS_SCHEMA_PATH +
                          " " + dir.string() + " > " + (dir / "validator.log").string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

Outcome determinism_and_formats() {
  Outcome o{true, ""};
  auto fail = [&](const std::string& why) { o.pass = false, o.detail += why + "; "; };
  // Identical seeds: byte-identical checkpoints (dropout and SpecAugment on).
  {
    auto lc = vt::load_synthetic(vt::small_task(), 12, 5, "acceptance_c8_corpus");
    auto m = vt::tiny_model(6, lc.corpus.vocab.size(), 5);
    TrainConfig t;
    t.max_epochs = 2;
    t.batch_size = 4;
    PhasePlan plan;
    plan.phase = Phase::kMixed;
    plan.allow_uninit = true;
    const auto a = work_dir() / "c8_a", b = work_dir() / "c8_b";
    run_phase<float>(plan, m, t, lc.utts, nullptr, RunOptions{a, false, 1, {}});
    run_phase<float>(plan, m, t, lc.utts, nullptr, RunOptions{b, false, 1, {}});
    for (const char* f : {"meta.json", "weights.bin", "optim/adam.json"})
      if (vt::file_bytes(a / "ckpt/last" / f) != vt::file_bytes(b / "ckpt/last" / f))
        fail(std::string("checkpoint ") + f + " differs between identical runs");
    // Checkpoint round trip: load + save reproduces the bytes.
    const auto back = load_checkpoint<float>(a / "ckpt/last");
    save_checkpoint(back, work_dir() / "c8_resaved");
    for (const char* f : {"meta.json", "weights.bin"})
      if (vt::file_bytes(a / "ckpt/last" / f) != vt::file_bytes(work_dir() / "c8_resaved" / f))
        fail(std::string("checkpoint round trip changed ") + f);
  }
  // Feature-file round trip, including awkward values.
  {
    Rng rng(808);
    auto f = random_features(37, 11, rng);
    f.frames.data[0] = -0.0f;
    f.frames.data[1] = std::numeric_limits<float>::denorm_min();
    f.frames.data[2] = std::numeric_limits<float>::max();
    const auto path = work_dir() / "c8.vlsf";
    write_feature_file(path, f);
    auto g = read_feature_file(path);
    if (g.frames.rows != 37 || g.frames.cols != 11 ||
        std::memcmp(g.frames.data.data(), f.frames.data.data(), f.frames.data.size() * sizeof(float)) != 0)
      fail("feature file round trip not bit-exact");
  }
  // Alignments for every decoded test utterance of the cue model.
  const auto& e = cue_experiment();
  const auto dir = work_dir() / "c8_align";
  fs::create_directories(dir);
  std::size_t docs = 0, broken = 0;
  for (const auto& u : e.test) {
    auto h = beam_search(e.model, e.with_cues, u.feat, u.cues, {10, true}).front();
    auto doc = extract_alignment(h, {u.feat.num_frames(), e.model.encoder.subsampling_factor(), u.feat.frame_shift_ms},
                                 e.vocab, u.id);
    if (!alignment_problems(doc).empty()) ++broken;
    std::ofstream(dir / (u.id + ".json")) << doc.dump(1) << '\n';
    ++docs;
  }
  if (broken) fail(std::to_string(broken) + " alignments not monotonic");
  const int rc = run_validator(dir);
  if (rc != 0) fail("schema validator exit " + std::to_string(rc) + " (see " + (dir / "validator.log").string() + ")");
  o.detail += "checkpoints identical + round trips exact; " + std::to_string(docs - broken) + "/" +
              std::to_string(docs) + " alignments monotonic, schema validator exit " + std::to_string(rc);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"gradient checks", gradients}},
      {2, {"CIF traces and firing count", cif_traces}},
      {3, {"CTC vs exhaustive path sum", ctc_exhaustive}},
      {4, {"beam search vs exhaustive, beam monotonicity", beam_search_checks}},
      {5, {"cues resolve ambiguity", cues_help}},
      {6, {"mixed-data robustness", mixed_robustness}},
      {7, {"fusion plans overfit", fusion_overfit}},
      {8, {"determinism and formats", determinism_and_formats}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [k, _] : criteria) selected.push_back(k);
  int failed = 0;
  for (int k : selected) {
    auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << k << "\n";
      return 2;
    }
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << k << " " << (o.pass ? "PASS" : "FAIL") << "  " << it->second.first << ": "
              << o.detail << "  [" << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  }
  return failed ? 1 : 0;
}
