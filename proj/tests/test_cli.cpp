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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "test_util.hpp"

using namespace vilas;
namespace fs = std::filesystem;
namespace vt = vilas::testing;

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(VILAS_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

const char* kSynthSpec = R"(# small corpus
synth.num_plain = 4
synth.num_pairs = 2
synth.frames_per_token = 8
synth.feat_dim = 6
synth.cue_dim = 5
synth.min_len = 2
synth.max_len = 4
)";

std::string run_config(const fs::path& corpus) {
  return "run.dtype = float\n"
         "model.feat_dim = 6\n"
         "model.visual_dim = 5\n"
         "model.linguistic_dim = 5\n"
         "encoder.conv_out_channels = 2\n"
         "encoder.num_blocks = 2\n"
         "encoder.d_model = 8\n"
         "encoder.d_ffn = 16\n"
         "encoder.heads = 2\n"
         "encoder.depthwise_kernel = 3\n"
         "encoder.pool_after_blocks = 1\n"
         "cif.channels = 8\n"
         "decoder.d_model = 8\n"
         "decoder.d_ffn = 16\n"
         "decoder.heads = 2\n"
         "decoder.num_blocks = 3\n"
         "decoder.visual_blocks = 2\n"
         "decoder.linguistic_blocks = 3\n"
         "train.max_epochs = 1\n"
         "train.batch_size = 4\n"
         "eval.beam = 2\n"
         "data.train_manifest = " + (corpus / "manifest.jsonl").string() + "\n";
}

std::string slurp(const fs::path& p) { return vt::file_bytes(p); }

}  // namespace

TEST(ConfigParse, KeysCommentsAndLists) {
  RunConfig c;
  std::vector<std::string> errors;
  apply_config_text(c,
                    "train.lr = 0.005   # inline comment\n"
                    "\n"
                    "decoder.visual_blocks = 2, 4\n"
                    "decoder.linguistic_blocks =\n"
                    "train.spec_augment = false\n"
                    "train.transfer_scope = encoder.,cif.,perception.\n",
                    "test", errors);
  EXPECT_TRUE(errors.empty()) << errors.front();
  EXPECT_DOUBLE_EQ(c.train.lr, 0.005);
  EXPECT_EQ(c.model.decoder.plan.visual, (std::set<std::size_t>{2, 4}));
  EXPECT_TRUE(c.model.decoder.plan.linguistic.empty());
  EXPECT_FALSE(c.train.spec_augment);
  EXPECT_EQ(c.plan.transfer_scope, (std::vector<std::string>{"encoder.", "cif.", "perception."}));
}

TEST(ConfigParse, CollectsEveryError) {
  RunConfig c;
  std::vector<std::string> errors;
  apply_config_text(c, "train.lr = fast\nno_equals_here\ntrain.bogus = 1\nencoder.heads = -2\n", "cfg", errors);
  ASSERT_EQ(errors.size(), 4u);
  EXPECT_NE(errors[0].find("cfg:1"), std::string::npos);
  EXPECT_NE(errors[2].find("train.bogus"), std::string::npos);
}

TEST(ConfigParse, LoadValidatesAndEchoRoundTrips) {
  auto dir = vt::fresh_dir("cfg");
  auto bad = write_file(dir / "bad.conf", "train.lr = 0\ndecoder.visual_blocks = 1\nunknown.key = 3\n");
  try {
    (void)load_run_config(bad, false);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("unknown.key"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lr must be positive"), std::string::npos) << msg;
    EXPECT_NE(msg.find("block 1"), std::string::npos) << msg;
  }
  EXPECT_THROW((void)load_run_config(dir / "missing.conf", false), ConfigError);
  RunConfig c;
  c.train.lr = 0.0123;
  c.model.decoder.plan = FusionPlan::named("E6");
  c.data.vocab = "v.txt";
  ConfigBinder b(c);
  auto echoed = write_file(dir / "echo.conf", b.echo());
  auto back = load_run_config(echoed, false);
  RunConfig back_copy = back;
  EXPECT_EQ(ConfigBinder(back_copy).echo(), b.echo());
  EXPECT_EQ(back.model.decoder.plan, FusionPlan::named("E6"));
}

TEST(ConfigParse, EnvironmentOverrides) {
  auto dir = vt::fresh_dir("cfg_env");
  auto f = write_file(dir / "a.conf", "train.lr = 0.1\n");
  ::setenv("VILAS_TRAIN__LR", "0.25", 1);
  ::setenv("VILAS_EVAL__BEAM", "3", 1);
  auto c = load_run_config(f, true);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.25);
  EXPECT_EQ(c.eval.beam, 3u);
  EXPECT_DOUBLE_EQ(load_run_config(f, false).train.lr, 0.1);
  ::setenv("VILAS_TRAIN__NOPE", "1", 1);
  EXPECT_THROW((void)load_run_config(f, true), ConfigError);
  ::unsetenv("VILAS_TRAIN__LR");
  ::unsetenv("VILAS_EVAL__BEAM");
  ::unsetenv("VILAS_TRAIN__NOPE");
}

class CliWorkflow : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root = new fs::path(vt::fresh_dir("cli"));
    write_file(*root / "synth.conf", kSynthSpec);
  }
  static void TearDownTestSuite() { delete root; }
  static fs::path* root;
};
fs::path* CliWorkflow::root = nullptr;

TEST_F(CliWorkflow, UsageErrorsExitTwo) {
  EXPECT_EQ(run("", *root / "log0"), 2);
  EXPECT_EQ(run("synth --out x --n 3", *root / "log1"), 2);
  EXPECT_EQ(run("train --config a.conf --out x --phase sideways", *root / "log2"), 2);
  EXPECT_EQ(run("frobnicate", *root / "log3"), 2);
}

TEST_F(CliWorkflow, SynthIsDeterministic) {
  const auto spec = (*root / "synth.conf").string();
  ASSERT_EQ(run("synth --spec " + spec + " --out " + (*root / "s1").string() + " --n 6 --seed 4", *root / "l1"), 0);
  ASSERT_EQ(run("synth --spec " + spec + " --out " + (*root / "s2").string() + " --n 6 --seed 4", *root / "l2"), 0);
  EXPECT_EQ(slurp(*root / "s1/manifest.jsonl"), slurp(*root / "s2/manifest.jsonl"));
  for (const auto& e : fs::directory_iterator(*root / "s1/feats"))
    EXPECT_EQ(slurp(e.path()), slurp(*root / "s2/feats" / e.path().filename()));
  EXPECT_EQ(read_manifest(*root / "s1/manifest.jsonl").size(), 6u);
  auto bad = write_file(*root / "badsynth.conf", "synth.cue_dim = 1\n");
  EXPECT_EQ(run("synth --spec " + bad.string() + " --out " + (*root / "s3").string() + " --n 2", *root / "l3"), 3);
}

TEST_F(CliWorkflow, TrainEvalDecodeAlign) {
  const auto spec = (*root / "synth.conf").string();
  const auto corpus = *root / "corpus";
  ASSERT_EQ(run("synth --spec " + spec + " --out " + corpus.string() + " --n 8 --seed 2", *root / "w0"), 0);
  const auto conf = write_file(*root / "run.conf", run_config(corpus));
  const auto m1 = *root / "m1";
  ASSERT_EQ(run("train --config " + conf.string() + " --out " + m1.string(), *root / "w1"), 0) << slurp(*root / "w1");
  EXPECT_TRUE(fs::exists(m1 / "ckpt/final/meta.json"));
  EXPECT_TRUE(fs::exists(m1 / "ckpt/last/optim/adam.json"));
  EXPECT_TRUE(fs::exists(m1 / "config.echo"));
  std::ifstream logs(m1 / "logs.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(logs, line));
  EXPECT_EQ(nlohmann::json::parse(line).at("epoch"), 1);

  // Mixed phase without --init is a validation error; with it, it trains.
  const auto m2 = *root / "m2";
  EXPECT_EQ(run("train --config " + conf.string() + " --phase mixed --out " + m2.string(), *root / "w2"), 3);
  ASSERT_EQ(run("train --config " + conf.string() + " --phase mixed --init " + (m1 / "ckpt/final").string() +
                    " --out " + m2.string(),
                *root / "w3"),
            0)
      << slurp(*root / "w3");
  const auto pre = load_checkpoint<float>(m1 / "ckpt/final");
  const auto fresh_m2 = load_checkpoint<float>(m2 / "ckpt/final");
  EXPECT_TRUE(fs::exists(m2 / "ckpt/final/meta.json"));
  EXPECT_EQ(pre.names(), fresh_m2.names());

  const std::string common = " --config " + conf.string() + " --ckpt " + (m2 / "ckpt/final").string() +
                             " --manifest " + (corpus / "manifest.jsonl").string();
  const auto ev = *root / "eval";
  ASSERT_EQ(run("eval" + common + " --cues off --out " + ev.string(), *root / "w4"), 0) << slurp(*root / "w4");
  auto report = nlohmann::json::parse(slurp(ev / "eval.json"));
  EXPECT_EQ(report["cues"], "off");
  EXPECT_EQ(report["utterances"].size(), 8u);
  EXPECT_GE(report["corpus"]["rate"].get<double>(), 0.0);
  EXPECT_NE(slurp(*root / "w4").find("error rate"), std::string::npos);

  const auto dec = *root / "dec";
  ASSERT_EQ(run("decode" + common + " --beam 3 --out " + dec.string(), *root / "w5"), 0);
  std::ifstream hyps(dec / "hypotheses.jsonl");
  std::size_t n = 0;
  for (std::string l; std::getline(hyps, l); ++n) EXPECT_LE(nlohmann::json::parse(l)["nbest"].size(), 3u);
  EXPECT_EQ(n, 8u);

  const auto al = *root / "align";
  ASSERT_EQ(run("align" + common + " --out " + al.string(), *root / "w6"), 0);
  std::size_t docs = 0;
  for (const auto& e : fs::directory_iterator(al)) {
    if (e.path().extension() != ".json") continue;
    auto doc = nlohmann::json::parse(slurp(e.path()));
    EXPECT_TRUE(alignment_problems(doc).empty()) << e.path();
    ++docs;
  }
  EXPECT_EQ(docs, 8u);

  EXPECT_EQ(run("eval" + common + " --cues maybe", *root / "w7"), 2);
  EXPECT_EQ(run("eval --config " + conf.string() + " --ckpt " + (*root / "nope").string() + " --manifest " +
                    (corpus / "manifest.jsonl").string(),
                *root / "w8"),
            4);
  auto wrong = write_file(*root / "wrong.conf", run_config(corpus) + "decoder.d_ffn = 32\n");
  EXPECT_EQ(run("eval --config " + wrong.string() + " --ckpt " + (m2 / "ckpt/final").string() + " --manifest " +
                    (corpus / "manifest.jsonl").string(),
                *root / "w9"),
            3);
}

TEST_F(CliWorkflow, ResumeContinuesEpochs) {
  const auto spec = (*root / "synth.conf").string();
  const auto corpus = *root / "corpus_r";
  ASSERT_EQ(run("synth --spec " + spec + " --out " + corpus.string() + " --n 4 --seed 3", *root / "r0"), 0);
  const auto conf = write_file(*root / "r.conf", run_config(corpus));
  const auto out = *root / "mr";
  ASSERT_EQ(run("train --config " + conf.string() + " --out " + out.string(), *root / "r1"), 0);
  const auto conf2 = write_file(*root / "r2.conf", run_config(corpus) + "train.max_epochs = 2\n");
  ASSERT_EQ(run("train --config " + conf2.string() + " --resume --out " + out.string(), *root / "r2"), 0);
  std::ifstream logs(out / "logs.jsonl");
  std::vector<int> epochs;
  for (std::string l; std::getline(logs, l);) epochs.push_back(nlohmann::json::parse(l)["epoch"].get<int>());
  EXPECT_EQ(epochs, (std::vector<int>{1, 2}));
}
