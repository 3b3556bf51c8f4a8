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

#include <fstream>
#include <set>

#include "test_util.hpp"

using namespace vilas;
namespace vt = vilas::testing;

namespace {

CorpusManifest fake_manifest(const std::string& prefix, std::size_t n, bool multimodal) {
  CorpusManifest m;
  m.base_dir = "/data/" + prefix;
  for (std::size_t i = 0; i < n; ++i) {
    ManifestRecord r{prefix + std::to_string(i), "f" + std::to_string(i) + ".vlsf", "t0 t1", std::nullopt, std::nullopt};
    if (multimodal) r.image_feat = "img" + std::to_string(i) + ".vlsf";
    m.records.push_back(r);
  }
  return m;
}

std::filesystem::path write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
  return p;
}

}  // namespace

TEST(VocabularyTest, ReservedIdsAndRoundTrip) {
  Vocabulary v;
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id("[PAD]"), kPad);
  EXPECT_EQ(v.id("[EOS]"), kEos);
  EXPECT_EQ(v.id("[BOS]"), kBos);
  v.add("hello");
  v.add("world");
  v.add("hello");
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.encode("hello there world"), (std::vector<int>{4, kUnk, 5}));
  EXPECT_EQ(v.decode({5, 4}), "world hello");
  EXPECT_THROW((void)v.token(17), Error);
  auto dir = vt::fresh_dir("vocab");
  v.save(dir / "v.txt");
  EXPECT_EQ(Vocabulary::load(dir / "v.txt").tokens(), v.tokens());
  write_lines(dir / "bad.txt", {"[PAD]", "[BOS]", "[EOS]", "[UNK]"});
  EXPECT_THROW((void)Vocabulary::load(dir / "bad.txt"), FormatError);
  write_lines(dir / "dup.txt", {"[PAD]", "[EOS]", "[BOS]", "[UNK]", "a", "a"});
  EXPECT_THROW((void)Vocabulary::load(dir / "dup.txt"), FormatError);
  EXPECT_THROW((void)Vocabulary::load(dir / "none.txt"), RuntimeError);
}

TEST(Manifest, RoundTripAndOptionalFields) {
  auto dir = vt::fresh_dir("manifest");
  std::ofstream(dir / "a.vlsf") << "x";
  std::ofstream(dir / "img.vlsf") << "x";
  CorpusManifest m;
  m.records = {{"u1", "a.vlsf", "t0 t1", "img.vlsf", "p0a"}, {"u2", "a.vlsf", "t1", std::nullopt, std::nullopt}};
  write_manifest(dir / "m.jsonl", m);
  auto r = read_manifest(dir / "m.jsonl");
  EXPECT_EQ(r.records, m.records);
  EXPECT_EQ(r.base_dir, dir);
  EXPECT_TRUE(r.records[0].is_multimodal());
  EXPECT_FALSE(r.records[1].is_multimodal());
  EXPECT_EQ(r.resolve("a.vlsf"), dir / "a.vlsf");
  EXPECT_EQ(r.resolve("/abs/x"), std::filesystem::path("/abs/x"));
}

TEST(Manifest, Errors) {
  auto dir = vt::fresh_dir("manifest_bad");
  std::ofstream(dir / "a.vlsf") << "x";
  EXPECT_THROW((void)read_manifest(dir / "none.jsonl"), RuntimeError);
  auto bad = [&](const std::string& name, const std::vector<std::string>& lines) {
    return write_lines(dir / name, lines);
  };
  EXPECT_THROW((void)read_manifest(bad("j.jsonl", {"{not json"})), FormatError);
  EXPECT_THROW((void)read_manifest(bad("m.jsonl", {R"({"id":"a","features":"a.vlsf"})"})), FormatError);
  EXPECT_THROW((void)read_manifest(bad("t.jsonl", {R"({"id":1,"features":"a.vlsf","transcript":"x"})"})), FormatError);
  EXPECT_THROW((void)read_manifest(bad("d.jsonl", {R"({"id":"a","features":"a.vlsf","transcript":"x"})",
                                                   R"({"id":"a","features":"a.vlsf","transcript":"y"})"})),
               FormatError);
  auto missing = bad("f.jsonl", {R"({"id":"a","features":"gone.vlsf","transcript":"x"})"});
  EXPECT_THROW((void)read_manifest(missing), RuntimeError);
  EXPECT_EQ(read_manifest(missing, false).size(), 1u);
  auto blank = bad("b.jsonl", {"", R"({"id":"a","features":"a.vlsf","transcript":"x","image_feat":null})", "  "});
  auto ok = read_manifest(blank);
  ASSERT_EQ(ok.size(), 1u);
  EXPECT_FALSE(ok.records[0].image_feat.has_value());
}

TEST(Mix, BalancedDeterministicAndAbsolute) {
  auto g = fake_manifest("g", 10, false), mm = fake_manifest("m", 4, true);
  auto a = mix(g, mm, 5), b = mix(g, mm, 5), c = mix(g, mm, 6);
  ASSERT_EQ(a.size(), 8u);  // 2 * min(10, 4)
  EXPECT_EQ(a.records, b.records);
  EXPECT_NE(a.records, c.records);
  std::size_t nm = 0;
  std::set<std::string> ids;
  for (const auto& r : a.records) {
    nm += r.is_multimodal();
    EXPECT_TRUE(ids.insert(r.id).second);
    EXPECT_TRUE(std::filesystem::path(r.features).is_absolute());
    if (r.image_feat) {
      EXPECT_TRUE(std::filesystem::path(*r.image_feat).is_absolute());
      EXPECT_EQ(r.image_feat->rfind("/data/m/", 0), 0u);
    }
  }
  EXPECT_EQ(nm, 4u);
  // All 4 multimodal records are used; the generic side is a 4-subset.
  auto swapped = mix(mm, g, 5);
  EXPECT_EQ(swapped.size(), 8u);
  EXPECT_THROW((void)mix(g, CorpusManifest{}, 1), ConfigError);
  EXPECT_THROW((void)mix(g, fake_manifest("g", 3, true), 1), ConfigError);
}

TEST(Mix, GenericSubsetIsUniform) {
  // Each generic record is picked with probability K / Ng.
  auto g = fake_manifest("g", 6, false), mm = fake_manifest("m", 2, true);
  std::map<std::string, int> hits;
  const int trials = 3000;
  for (int s = 0; s < trials; ++s)
    for (const auto& r : mix(g, mm, s).records)
      if (!r.is_multimodal()) ++hits[r.id];
  for (const auto& [id, n] : hits) EXPECT_NEAR(n / static_cast<double>(trials), 2.0 / 6.0, 0.04) << id;
  EXPECT_EQ(hits.size(), 6u);
}

TEST(CueModes, MaskModalities) {
  MultimodalCues c{{Matrix(3, 4, 1.f), Modality::kVisual, false}, {Matrix(5, 2, 1.f), Modality::kLinguistic, false}};
  auto off = apply_cue_mode(c, CueMode::kOff);
  EXPECT_TRUE(off.visual.is_placeholder);
  EXPECT_TRUE(off.linguistic.is_placeholder);
  EXPECT_EQ(off.visual.dim(), 4u);
  EXPECT_EQ(off.linguistic.dim(), 2u);
  auto vis = apply_cue_mode(c, CueMode::kVisual);
  EXPECT_FALSE(vis.visual.is_placeholder);
  EXPECT_TRUE(vis.linguistic.is_placeholder);
  auto all = apply_cue_mode(c, CueMode::kAll);
  EXPECT_EQ(all.visual.vectors, c.visual.vectors);
  EXPECT_EQ(parse_cue_mode("on"), CueMode::kAll);
  EXPECT_EQ(parse_cue_mode("linguistic"), CueMode::kLinguistic);
  EXPECT_STREQ(cue_mode_name(CueMode::kOff), "off");
  EXPECT_THROW((void)parse_cue_mode("both"), ConfigError);
}

TEST(Synthetic, DeterministicFilesAndLayout) {
  auto spec = vt::small_task();
  auto a = generate_synthetic(spec, 10, 4, vt::fresh_dir("syn_a"));
  auto b = generate_synthetic(spec, 10, 4, vt::fresh_dir("syn_b"));
  EXPECT_EQ(vt::file_bytes(a.manifest_path), vt::file_bytes(b.manifest_path));
  for (std::size_t i = 0; i < 10; ++i)
    EXPECT_EQ(vt::file_bytes(a.manifest.resolve(a.manifest.records[i].features)),
              vt::file_bytes(b.manifest.resolve(b.manifest.records[i].features)));
  EXPECT_EQ(a.manifest.records[3].id, "utt-000003");
  EXPECT_EQ(Vocabulary::load(a.manifest_path.parent_path() / "vocab.txt").tokens(), a.vocab.tokens());
  EXPECT_EQ(a.vocab.size(), 4u + 4 + 2 * 2);
  auto reread = read_manifest(a.manifest_path);
  EXPECT_EQ(reread.records, a.manifest.records);
  spec.cue_dim = 3;  // < 2 * num_pairs
  EXPECT_THROW((void)generate_synthetic(spec, 1, 1, vt::fresh_dir("syn_c")), ConfigError);
}

TEST(Synthetic, FeaturesFollowPrototypesAndCuesEncodeChoices) {
  auto spec = vt::small_task();
  spec.ambiguous_prob = 0.6;
  spec.context_prob = 1.0;
  auto lc = vt::load_synthetic(spec, 30, 8, "syn_proto");
  const std::size_t P = spec.num_pairs;
  for (std::size_t n = 0; n < lc.utts.size(); ++n) {
    const auto& u = lc.utts[n];
    const auto& rec = lc.corpus.manifest.records[n];
    ASSERT_EQ(u.feat.num_frames(), u.target.size() * spec.frames_per_token);
    ASSERT_GE(u.target.size(), spec.min_len);
    ASSERT_LE(u.target.size(), spec.max_len);
    std::vector<float> sign(P, 0.f);
    std::string ctx;
    for (std::size_t i = 0; i < u.target.size(); ++i) {
      const std::string tok = lc.corpus.vocab.token(u.target[i]);
      const bool pair = tok[0] == 'p';
      const std::string cls = pair ? "pair" + tok.substr(1, tok.size() - 2) : tok;
      const auto proto = synthetic_prototype(spec, cls);
      for (std::size_t r = 0; r < spec.frames_per_token; ++r)
        for (std::size_t c = 0; c < spec.feat_dim; ++c)
          ASSERT_EQ(u.feat.frames(i * spec.frames_per_token + r, c), proto(r, c));
      if (pair) sign[std::stoul(tok.substr(1, tok.size() - 2))] = tok.back() == 'a' ? 1.f : -1.f;
    }
    ASSERT_TRUE(rec.image_feat.has_value());
    const auto& cue = u.cues.visual.vectors;
    ASSERT_EQ(cue.rows, 1 + P);
    for (std::size_t k = 0; k < P; ++k) {
      EXPECT_EQ(cue(0, k), sign[k]);
      EXPECT_EQ(cue(1 + k, k), sign[k]);
      EXPECT_EQ(cue(1 + k, P + k), 1.f);
      if (sign[k] != 0) ctx += (ctx.empty() ? "" : " ") + std::string("p") + std::to_string(k) + (sign[k] > 0 ? "a" : "b");
    }
    ASSERT_TRUE(rec.context_text.has_value());
    EXPECT_EQ(*rec.context_text, ctx);
  }
}

TEST(Synthetic, TwinsShareFeaturesAndFlipPairs) {
  auto spec = vt::small_task();
  spec.twins = true;
  spec.ambiguous_prob = 0.7;
  auto lc = vt::load_synthetic(spec, 20, 2, "syn_twins");
  std::size_t with_pairs = 0;
  for (std::size_t n = 0; n + 1 < lc.utts.size(); n += 2) {
    const auto& a = lc.utts[n];
    const auto& b = lc.utts[n + 1];
    EXPECT_EQ(a.feat.frames, b.feat.frames);
    ASSERT_EQ(a.target.size(), b.target.size());
    bool any_pair = false;
    for (std::size_t i = 0; i < a.target.size(); ++i) {
      const auto ta = lc.corpus.vocab.token(a.target[i]), tb = lc.corpus.vocab.token(b.target[i]);
      if (ta[0] == 'p') {
        any_pair = true;
        EXPECT_EQ(ta.substr(0, ta.size() - 1), tb.substr(0, tb.size() - 1));
        EXPECT_NE(ta.back(), tb.back());
      } else {
        EXPECT_EQ(ta, tb);
      }
    }
    with_pairs += any_pair;
    if (any_pair) EXPECT_NE(a.cues.visual.vectors, b.cues.visual.vectors);
  }
  EXPECT_GT(with_pairs, 0u);
}

TEST(Synthetic, GenericDomainHasNoCues) {
  auto spec = vt::small_task();
  spec.multimodal = false;
  spec.plain_begin = 1;
  spec.plain_end = 3;
  auto c = generate_synthetic(spec, 15, 1, vt::fresh_dir("syn_generic"));
  for (const auto& r : c.manifest.records) {
    EXPECT_FALSE(r.is_multimodal());
    for (const auto& w : split_whitespace(r.transcript)) EXPECT_TRUE(w == "t1" || w == "t2") << w;
  }
  EXPECT_FALSE(std::filesystem::exists(c.manifest_path.parent_path() / "cues"));
}

TEST(Synthetic, NoiseIsSeeded) {
  auto spec = vt::small_task();
  spec.noise_sigma = 0.5;
  auto a = vt::load_synthetic(spec, 3, 9, "syn_noise_a");
  auto b = vt::load_synthetic(spec, 3, 9, "syn_noise_b");
  EXPECT_EQ(a.utts[0].feat.frames, b.utts[0].feat.frames);
  const auto tok = a.corpus.vocab.token(a.utts[0].target[0]);
  const auto proto = synthetic_prototype(spec, tok[0] == 'p' ? "pair" + tok.substr(1, tok.size() - 2) : tok);
  EXPECT_NE(a.utts[0].feat.frames(0, 0), proto(0, 0));
}

TEST(LoadUtterances, EmptyTranscriptRejected) {
  auto dir = vt::fresh_dir("load_empty");
  write_matrix_file(dir / "a.vlsf", Matrix(4, 2, 0.f));
  write_lines(dir / "m.jsonl", {R"({"id":"a","features":"a.vlsf","transcript":""})"});
  VisualProvider vp(ProviderKind::kStub, 2);
  LinguisticProvider lp(ProviderKind::kStub, 2);
  EXPECT_THROW((void)load_utterances(read_manifest(dir / "m.jsonl"), Vocabulary{}, vp, lp), FormatError);
}
