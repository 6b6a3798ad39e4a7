// Copyright 2026 PCST Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "pcst/data.hpp"
#include "pcst/sha256.hpp"

using namespace pcst;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

WorldConfig small_world() {
  WorldConfig cfg;
  cfg.seed = 5;
  cfg.n_src = 8;
  cfg.d_frames = 4;
  cfg.st_train = 30;
  cfg.st_dev = 10;
  cfg.st_test = 10;
  cfg.asr_train = 40;
  cfg.asr_dev = 8;
  cfg.text_train = 40;
  cfg.text_dev = 8;
  cfg.preset = "unit";
  return cfg;
}

}  // namespace

TEST_CASE("build_language determinism and bijection") {
  LanguageSpec a = build_language(42, 10);
  LanguageSpec b = build_language(42, 10);
  CHECK(a.lexicon == b.lexicon);
  std::set<int32_t> image(a.lexicon.begin(), a.lexicon.end());
  CHECK(image.size() == 10);
  CHECK(*image.begin() == 0);
  CHECK(*image.rbegin() == 9);
  CHECK_THROWS_AS(build_language(1, 3), ConfigError);
}

TEST_CASE("translate_text applies the lexicon then swaps pairs") {
  LanguageSpec lang;
  lang.n_src = 6;
  lang.lexicon = {0, 1, 2, 3, 4, 5};  // identity-index mapping
  const Vocabulary vocab = lang.vocab();
  // x = [s3, s1, s4] -> mapped [t3, t1, t4] -> swap first pair -> [t1, t3, t4]
  std::vector<int32_t> x = {vocab.src_id(3), vocab.src_id(1), vocab.src_id(4)};
  auto y = translate_text(x, lang);
  CHECK(y == std::vector<int32_t>{vocab.tgt_id(1), vocab.tgt_id(3), vocab.tgt_id(4)});

  // single token: mapped, no reorder
  auto single = translate_text({vocab.src_id(2)}, lang);
  CHECK(single == std::vector<int32_t>{vocab.tgt_id(2)});

  CHECK_THROWS_AS(translate_text({0}, lang), IndexError);  // PAD is not a source token

  // length preservation on random sentences
  LanguageSpec shuffled = build_language(9, 8);
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int32_t> s;
    const int len = 1 + static_cast<int>(rng.uniform_int(9));
    for (int i = 0; i < len; ++i)
      s.push_back(shuffled.vocab().src_id(static_cast<int32_t>(rng.uniform_int(8))));
    CHECK(translate_text(s, shuffled).size() == s.size());
  }
}

TEST_CASE("translate_text is injective over distinct sentences") {
  LanguageSpec lang = build_language(3, 9);
  Rng rng(123);
  std::set<std::vector<int32_t>> inputs;
  std::set<std::vector<int32_t>> outputs;
  while (inputs.size() < 300) {
    std::vector<int32_t> s;
    const int len = 1 + static_cast<int>(rng.uniform_int(6));
    for (int i = 0; i < len; ++i)
      s.push_back(lang.vocab().src_id(static_cast<int32_t>(rng.uniform_int(9))));
    if (inputs.insert(s).second) outputs.insert(translate_text(s, lang));
  }
  CHECK(outputs.size() == inputs.size());
}

TEST_CASE("render_speech duration bounds, determinism and noiseless limit") {
  LanguageSpec lang = build_language(4, 6);
  RenderSpec spec = build_render(lang, 5, 0.1);
  const Vocabulary vocab = lang.vocab();
  std::vector<int32_t> x = {vocab.src_id(0), vocab.src_id(3), vocab.src_id(5)};

  TensorF a = render_speech(x, "sent-1", spec, 11);
  TensorF b = render_speech(x, "sent-1", spec, 11);
  CHECK(a.rows() >= 6);
  CHECK(a.rows() <= 12);
  REQUIRE(a.numel() == b.numel());
  for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.at(i) == b.at(i));

  TensorF c = render_speech(x, "sent-2", spec, 11);
  (void)c;  // different id may legitimately differ in length; just must not throw

  RenderSpec clean = spec;
  clean.noise_sigma = 0.0;
  TensorF d = render_speech(x, "sent-1", clean, 11);
  int64_t row = 0;
  for (size_t tok = 0; tok < x.size(); ++tok) {
    const auto& base = spec.base[static_cast<size_t>(x[tok] - Vocabulary::kSpecials)];
    // every frame of this token equals its base vector exactly
    while (row < d.rows()) {
      bool matches = true;
      for (int64_t j = 0; j < 5; ++j) matches &= (d.at(row, j) == base[static_cast<size_t>(j)]);
      if (!matches) break;
      ++row;
    }
  }
  CHECK(row == d.rows());
}

TEST_CASE("corpus round-trip is lossless") {
  LanguageSpec lang = build_language(21, 6);
  RenderSpec spec = build_render(lang, 3, 0.1);
  const Vocabulary vocab = lang.vocab();
  std::vector<Triple> triples;
  for (int i = 0; i < 5; ++i) {
    Triple tr;
    tr.id = "unit-" + std::to_string(i);
    tr.src = {vocab.src_id(i), vocab.src_id((i + 1) % 6)};
    if (i % 2 == 0) tr.tgt = translate_text(tr.src, lang);
    tr.frames = render_speech(tr.src, tr.id, spec, 4);
    triples.push_back(std::move(tr));
  }
  const std::string path = "/tmp/pcst_test_corpus.jsonl";
  write_corpus(triples, path);
  auto loaded = read_corpus(path);
  REQUIRE(loaded.size() == triples.size());
  for (size_t i = 0; i < triples.size(); ++i) {
    CHECK(loaded[i].id == triples[i].id);
    CHECK(loaded[i].src == triples[i].src);
    CHECK(loaded[i].tgt == triples[i].tgt);
    REQUIRE(loaded[i].frames.shape() == triples[i].frames.shape());
    for (int64_t j = 0; j < triples[i].frames.numel(); ++j)
      REQUIRE(loaded[i].frames.at(j) == triples[i].frames.at(j));
  }

  // write -> read -> write reproduces the bytes
  write_corpus(loaded, path + ".2");
  CHECK(Sha256::of(slurp(path).data(), slurp(path).size()) ==
        Sha256::of(slurp(path + ".2").data(), slurp(path + ".2").size()));
}

TEST_CASE("corpus parse errors name the line") {
  const std::string path = "/tmp/pcst_test_bad.jsonl";
  {
    std::ofstream f(path);
    f << R"({"schema":"pcst-1","id":"ok","src":[4],"tgt":null,"frames":{"t":1,"d":1,"data":[0.5]}})"
      << "\n";
    f << R"({"schema":"pcst-1","id":"trunc)" << "\n";
  }
  CHECK_THROWS_WITH_AS(read_corpus(path), doctest::Contains("line 2"), ParseError);
  {
    std::ofstream f(path);
    f << R"({"schema":"pcst-9","id":"v","src":[4],"tgt":null,"frames":{"t":1,"d":1,"data":[0.5]}})"
      << "\n";
  }
  CHECK_THROWS_AS(read_corpus(path), VersionError);
}

TEST_CASE("duration buckets") {
  std::vector<Triple> corpus;
  for (int i = 0; i < 500; ++i) {
    Triple tr;
    tr.id = "b-" + std::to_string(1000 + i);
    tr.frames = TensorF({1 + (i % 25), 2});
    corpus.push_back(std::move(tr));
  }
  auto buckets = bucket_by_duration(corpus, 5);
  REQUIRE(buckets.size() == 5);
  std::set<size_t> seen;
  int64_t prev_max = -1;
  for (const auto& b : buckets) {
    CHECK(b.items.size() == 100);
    CHECK(b.min_dur >= prev_max);
    prev_max = b.max_dur;
    for (size_t idx : b.items) CHECK(seen.insert(idx).second);
  }
  CHECK(seen.size() == corpus.size());

  // all-equal durations: ties broken by id, sizes still equal
  for (auto& tr : corpus) tr.frames = TensorF({3, 2});
  auto tied = bucket_by_duration(corpus, 5);
  for (const auto& b : tied) CHECK(b.items.size() == 100);
  std::string prev_id;
  for (const auto& b : tied) {
    for (size_t idx : b.items) {
      CHECK(corpus[idx].id > prev_id);
      prev_id = corpus[idx].id;
    }
  }

  std::vector<Triple> three(corpus.begin(), corpus.begin() + 3);
  CHECK_THROWS_AS(bucket_by_duration(three, 5), ConfigError);
  CHECK_THROWS_AS(bucket_by_duration({}, 5), UsageError);
}

TEST_CASE("gen_world: split hygiene and byte-identical regeneration") {
  const std::string dir1 = "/tmp/pcst_world_a";
  const std::string dir2 = "/tmp/pcst_world_b";
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
  WorldConfig cfg = small_world();
  World w1 = gen_world(cfg, dir1);
  World w2 = gen_world(cfg, dir2);

  const char* files[] = {"st-train.jsonl", "st-dev.jsonl",   "st-test.jsonl", "asr-train.jsonl",
                         "asr-dev.jsonl",  "text-train.jsonl", "text-dev.jsonl", "manifest.json"};
  for (const char* f : files) {
    const std::string a = slurp(dir1 + "/" + f);
    const std::string b = slurp(dir2 + "/" + f);
    REQUIRE(Sha256::of(a.data(), a.size()) == Sha256::of(b.data(), b.size()));
  }

  // sentence sets pairwise disjoint across every split
  std::set<std::vector<int32_t>> seen;
  size_t total = 0;
  for (const char* f : {"st-train.jsonl", "st-dev.jsonl", "st-test.jsonl", "asr-train.jsonl",
                        "asr-dev.jsonl", "text-train.jsonl", "text-dev.jsonl"}) {
    for (const auto& tr : read_corpus(dir1 + "/" + std::string(f))) {
      seen.insert(tr.src);
      ++total;
    }
  }
  CHECK(seen.size() == total);

  // ST translations follow the language rule
  for (const auto& tr : read_corpus(dir1 + "/st-test.jsonl")) {
    CHECK(tr.tgt == translate_text(tr.src, w1.lang));
    CHECK(tr.duration() >= 2 * static_cast<int64_t>(tr.src.size()));
    CHECK(tr.duration() <= 4 * static_cast<int64_t>(tr.src.size()));
  }

  // manifest round-trip reproduces the world
  World loaded = load_manifest(dir1 + "/manifest.json");
  CHECK(loaded.lang.lexicon == w1.lang.lexicon);
  CHECK(loaded.render.base == w1.render.base);
  CHECK(loaded.cfg.st_train == cfg.st_train);
  (void)w2;
}
