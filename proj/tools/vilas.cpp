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

// vilas: synthetic corpora, two-phase training, evaluation, decoding and
// alignment export.
//
//   vilas synth  --spec synth.conf --out corpus/ --n 200 --seed 1
//   vilas train  --config run.conf --phase pretrain --out runs/m1
//   vilas train  --config run.conf --phase mixed --init runs/m1/ckpt/last --out runs/m2
//   vilas eval   --config run.conf --ckpt runs/m2/ckpt/last --manifest test.jsonl --cues off
//   vilas decode --config run.conf --ckpt ... --manifest ... --beam 10 --out hyps/
//   vilas align  --config run.conf --ckpt ... --manifest ... --out align/
//
// Exit codes: 0 success, 2 usage, 3 validation, 4 runtime.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vilas/vilas.hpp"

namespace fs = std::filesystem;
using namespace vilas;

namespace {

constexpr int kExitOk = 0, kExitUsage = 2, kExitValidation = 3, kExitRuntime = 4;

struct Args {
  std::string spec, config, out, init, ckpt, manifest, phase = "pretrain", cues;
  std::size_t n = 0, beam = 0;
  std::uint64_t seed = 1;
  bool resume = false;
};

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  out << s;
  if (!out) throw RuntimeError("failed writing " + p.string());
}

RunConfig load_config(const std::string& path) {
  return load_run_config(path.empty() ? std::nullopt : std::optional<fs::path>(path));
}

Vocabulary load_vocab(const RunConfig& cfg, const fs::path& manifest) {
  fs::path p = cfg.data.vocab.empty() ? manifest.parent_path() / "vocab.txt" : fs::path(cfg.data.vocab);
  return Vocabulary::load(p);
}

// Fills vocab_size from the vocabulary when the config leaves it at 0, then
// re-validates the model section.
ModelConfig resolve_model(const RunConfig& cfg, const Vocabulary& vocab) {
  ModelConfig m = cfg.model;
  if (m.vocab_size == 0) m.vocab_size = vocab.size();
  if (m.vocab_size != vocab.size()) {
    throw ConfigError("model.vocab_size " + std::to_string(m.vocab_size) + " disagrees with vocabulary size " +
                      std::to_string(vocab.size()));
  }
  auto probs = m.problems();
  if (!probs.empty()) {
    std::string msg = "invalid model configuration:";
    for (auto& p : probs) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return m;
}

VisualProvider visual_provider(const RunConfig& cfg) {
  return VisualProvider(cfg.data.visual_provider == "stub" ? ProviderKind::kStub : ProviderKind::kPrecomputed,
                        cfg.model.visual_dim, cfg.data.provider_seed, cfg.data.visual_stub_rows);
}

LinguisticProvider linguistic_provider(const RunConfig& cfg) {
  return LinguisticProvider(cfg.data.linguistic_provider == "stub" ? ProviderKind::kStub : ProviderKind::kPrecomputed,
                            cfg.model.linguistic_dim, cfg.data.provider_seed);
}

std::vector<Utterance> load_corpus(const RunConfig& cfg, const CorpusManifest& m, const Vocabulary& vocab) {
  auto utts = load_utterances(m, vocab, visual_provider(cfg), linguistic_provider(cfg));
  for (const auto& u : utts) {
    if (u.feat.dim() != cfg.model.feat_dim) {
      throw ConfigError("utterance " + u.id + " has feature dimension " + std::to_string(u.feat.dim()) +
                        ", model.feat_dim is " + std::to_string(cfg.model.feat_dim));
    }
  }
  return utts;
}

// --------------------------------------------------------------------- synth

int cmd_synth(const Args& a) {
  RunConfig cfg = load_config(a.spec);
  auto corpus = generate_synthetic(cfg.synth, a.n, a.seed, a.out);
  std::cout << "wrote " << corpus.manifest.size() << " utterances to " << corpus.manifest_path.string() << "\n";
  return kExitOk;
}

// --------------------------------------------------------------------- train

template <class T>
int train_impl(const RunConfig& cfg, const Args& a) {
  PhasePlan plan = cfg.plan;
  plan.phase = a.phase == "mixed" ? Phase::kMixed : Phase::kPretrain;
  plan.cues = parse_cue_mode(cfg.train_cues);
  const std::string init = !a.init.empty() ? a.init : cfg.init_from;
  if (!init.empty()) plan.init_from = fs::path(init);
  if (plan.phase == Phase::kMixed && !plan.init_from && !plan.allow_uninit) {
    throw ConfigError("mixed phase requires --init <M1 checkpoint> (or train.allow_uninit = true)");
  }
  if (plan.init_from && !fs::exists(*plan.init_from / "meta.json")) {
    throw RuntimeError("initial checkpoint not found: " + plan.init_from->string());
  }

  CorpusManifest train_m;
  fs::path vocab_anchor;
  if (plan.phase == Phase::kMixed && cfg.data.train_manifest.empty()) {
    if (cfg.data.generic_manifest.empty() || cfg.data.multimodal_manifest.empty()) {
      throw ConfigError("mixed phase needs data.train_manifest or data.generic_manifest + data.multimodal_manifest");
    }
    train_m = mix(read_manifest(cfg.data.generic_manifest), read_manifest(cfg.data.multimodal_manifest),
                  cfg.data.mix_seed);
    vocab_anchor = cfg.data.generic_manifest;
    write_manifest(fs::path(a.out) / "reports" / "mixed_manifest.jsonl", train_m);
  } else {
    if (cfg.data.train_manifest.empty()) throw ConfigError("data.train_manifest is required");
    train_m = read_manifest(cfg.data.train_manifest);
    vocab_anchor = cfg.data.train_manifest;
  }
  const Vocabulary vocab = load_vocab(cfg, vocab_anchor);
  const ModelConfig mcfg = resolve_model(cfg, vocab);
  auto train = load_corpus(cfg, train_m, vocab);
  std::vector<Utterance> dev;
  if (!cfg.data.dev_manifest.empty()) dev = load_corpus(cfg, read_manifest(cfg.data.dev_manifest), vocab);

  fs::create_directories(fs::path(a.out) / "reports");
  RunConfig echo_cfg = cfg;
  ConfigBinder echo(echo_cfg);
  write_text(fs::path(a.out) / "config.echo",
             echo.echo() + "# phase = " + a.phase + "\n# init = " + init + "\n# vocab_size = " +
                 std::to_string(mcfg.vocab_size) + "\n");

  RunOptions ro;
  ro.out_dir = fs::path(a.out);
  ro.resume = a.resume;
  ro.on_epoch = [](const EpochRecord& r) { std::cout << r.to_json().dump() << std::endl; };
  auto trainer = run_phase<T>(plan, mcfg, cfg.train, train, dev.empty() ? nullptr : &dev, ro);
  save_checkpoint(trainer.params(), fs::path(a.out) / "ckpt" / "final");
  std::cout << "final checkpoint: " << (fs::path(a.out) / "ckpt" / "final").string() << "\n";
  return kExitOk;
}

int cmd_train(const Args& a) {
  RunConfig cfg = load_config(a.config);
  if (a.phase != "pretrain" && a.phase != "mixed") throw ConfigError("--phase must be pretrain or mixed");
  return cfg.dtype == "double" ? train_impl<double>(cfg, a) : train_impl<float>(cfg, a);
}

// ------------------------------------------------------- eval / decode / align

enum class Mode { kEval, kDecode, kAlign };

template <class T>
int infer_impl(const RunConfig& cfg, const Args& a, Mode mode) {
  if (a.ckpt.empty()) throw ConfigError("--ckpt is required");
  const std::string manifest_path = !a.manifest.empty() ? a.manifest : cfg.data.test_manifest;
  if (manifest_path.empty()) throw ConfigError("--manifest (or data.test_manifest) is required");
  const CueMode cues = parse_cue_mode(a.cues.empty() ? cfg.eval.cues : a.cues);
  const std::size_t beam = a.beam ? a.beam : cfg.eval.beam;

  const auto manifest = read_manifest(manifest_path);
  const Vocabulary vocab = load_vocab(cfg, manifest_path);
  const ModelConfig mcfg = resolve_model(cfg, vocab);
  if (!fs::exists(fs::path(a.ckpt) / "meta.json")) throw RuntimeError("checkpoint not found: " + a.ckpt);
  const auto params = load_checkpoint<T>(a.ckpt);
  const auto bad = shape_mismatches(mcfg, params);
  if (!bad.empty()) {
    std::string msg = "checkpoint does not match the model configuration:";
    for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 10); ++i) msg += "\n  " + bad[i];
    throw ConfigError(msg);
  }
  const auto utts = load_corpus(cfg, manifest, vocab);

  const fs::path out = a.out.empty() ? fs::path(".") : fs::path(a.out);
  std::vector<std::vector<int>> refs, hyps;
  nlohmann::json per_utt = nlohmann::json::array();
  std::ofstream hyp_file;
  if (mode == Mode::kDecode) {
    fs::create_directories(out);
    hyp_file.open(out / "hypotheses.jsonl", std::ios::trunc);
  }
  for (const auto& u : utts) {
    const auto masked = apply_cue_mode(u.cues, cues);
    auto ranked = beam_search(mcfg, params, u.feat, masked, SearchOptions{beam, mode == Mode::kAlign});
    const auto& best = ranked.front();
    refs.push_back(u.target);
    hyps.push_back(best.tokens);
    const auto rep = error_rate(u.target, best.tokens);
    per_utt.push_back({{"id", u.id},
                       {"ref", vocab.decode(u.target)},
                       {"hyp", vocab.decode(best.tokens)},
                       {"total_logprob", best.total_logprob},
                       {"empty_fire", best.empty_fire},
                       {"errors", to_json(rep)}});
    if (mode == Mode::kDecode) {
      nlohmann::json nbest = nlohmann::json::array();
      for (const auto& h : ranked) nbest.push_back({{"hyp", vocab.decode(h.tokens)}, {"total_logprob", h.total_logprob}});
      hyp_file << nlohmann::json{{"id", u.id}, {"hyp", vocab.decode(best.tokens)}, {"beam", beam}, {"nbest", nbest}}.dump()
               << '\n';
    }
    if (mode == Mode::kAlign) {
      const FeatureMeta meta{u.feat.num_frames(), mcfg.encoder.subsampling_factor(), u.feat.frame_shift_ms};
      auto doc = extract_alignment(best, meta, vocab, u.id, cfg.eval.top_k);
      write_text(out / (u.id + ".json"), doc.dump(1) + "\n");
      if (cfg.eval.pgm) {
        if (best.visual_keys)
          write_attention_pgm(out / (u.id + ".visual.pgm"), best.visual_attention, best.tokens.size(), best.visual_keys);
        if (best.linguistic_keys)
          write_attention_pgm(out / (u.id + ".linguistic.pgm"), best.linguistic_attention, best.tokens.size(),
                              best.linguistic_keys);
      }
    }
  }
  const auto total = error_rate(refs, hyps);
  nlohmann::json report = {{"manifest", manifest_path}, {"checkpoint", a.ckpt}, {"cues", cue_mode_name(cues)},
                           {"beam", beam},             {"corpus", to_json(total)}, {"utterances", per_utt}};
  if (mode == Mode::kEval) write_text(out / "eval.json", report.dump(1) + "\n");
  std::printf("utterances %zu  cues %s  beam %zu  error rate %.4f  (S %zu D %zu I %zu / N %zu)\n", utts.size(),
              cue_mode_name(cues), beam, total.rate, total.substitutions, total.deletions, total.insertions,
              total.ref_length);
  return kExitOk;
}

int cmd_infer(const Args& a, Mode mode) {
  RunConfig cfg = load_config(a.config);
  return cfg.dtype == "double" ? infer_impl<double>(cfg, a, mode) : infer_impl<float>(cfg, a, mode);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vilas: multimodal CIF speech recognition on synthetic corpora"};
  app.require_subcommand(1);
  Args a;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--spec", a.spec, "config file with synth.* keys")->required();
  synth->add_option("--out", a.out, "output directory")->required();
  synth->add_option("--n", a.n, "number of utterances")->required();
  synth->add_option("--seed", a.seed, "generation seed");

  auto* train = app.add_subcommand("train", "run a training phase");
  train->add_option("--config", a.config, "run config")->required();
  train->add_option("--phase", a.phase, "pretrain|mixed")->check(CLI::IsMember({"pretrain", "mixed"}));
  train->add_option("--init", a.init, "initial checkpoint for the mixed phase");
  train->add_option("--out", a.out, "run directory")->required();
  train->add_flag("--resume", a.resume, "continue from <out>/ckpt/last");

  struct Sub {
    const char* name;
    const char* help;
    Mode mode;
  };
  std::vector<std::pair<CLI::App*, Mode>> infer;
  for (const Sub& s : {Sub{"eval", "score a manifest", Mode::kEval}, Sub{"decode", "write n-best hypotheses", Mode::kDecode},
                       Sub{"align", "write alignment JSON", Mode::kAlign}}) {
    auto* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("--config", a.config, "run config")->required();
    sc->add_option("--ckpt", a.ckpt, "checkpoint directory")->required();
    sc->add_option("--manifest", a.manifest, "manifest to decode");
    sc->add_option("--cues", a.cues, "all|off|visual|linguistic")
        ->check(CLI::IsMember({"all", "on", "off", "visual", "linguistic"}));
    sc->add_option("--beam", a.beam, "beam size");
    sc->add_option("--out", a.out, "output directory");
    infer.emplace_back(sc, s.mode);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(a);
    if (train->parsed()) return cmd_train(a);
    for (auto& [sc, mode] : infer)
      if (sc->parsed()) return cmd_infer(a, mode);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
