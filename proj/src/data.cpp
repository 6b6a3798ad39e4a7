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

#include "pcst/data.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "pcst/rng.hpp"

namespace pcst {

using nlohmann::json;

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

LanguageSpec build_language(uint64_t seed, int32_t n_src) {
  if (n_src < 4) throw ConfigError("build_language: need at least 4 source tokens, got " +
                                   std::to_string(n_src));
  LanguageSpec lang;
  lang.n_src = n_src;
  lang.seed = seed;
  lang.lexicon.resize(static_cast<size_t>(n_src));
  std::iota(lang.lexicon.begin(), lang.lexicon.end(), 0);
  Rng rng(hash_combine(seed, 0x6c616e67));
  rng.shuffle(lang.lexicon);
  return lang;
}

RenderSpec build_render(const LanguageSpec& lang, int64_t d_frames, double noise_sigma) {
  RenderSpec spec;
  spec.d_frames = d_frames;
  spec.noise_sigma = noise_sigma;
  Rng rng(hash_combine(lang.seed, 0x62617365));
  spec.base.resize(static_cast<size_t>(lang.n_src));
  for (auto& vec : spec.base) {
    vec.resize(static_cast<size_t>(d_frames));
    for (auto& v : vec) v = static_cast<float>(rng.normal());
  }
  return spec;
}

std::vector<int32_t> translate_text(const std::vector<int32_t>& src_ids, const LanguageSpec& lang) {
  const Vocabulary vocab = lang.vocab();
  std::vector<int32_t> out;
  out.reserve(src_ids.size());
  for (int32_t id : src_ids) {
    const int32_t idx = vocab.src_index(id);  // throws IndexError on bad ids
    out.push_back(vocab.tgt_id(lang.lexicon[static_cast<size_t>(idx)]));
  }
  for (size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
  return out;
}

TensorF render_speech(const std::vector<int32_t>& src_ids, const std::string& sentence_id,
                      const RenderSpec& spec, uint64_t seed) {
  if (src_ids.empty()) throw DataError("render_speech: empty sentence");
  const uint64_t sid = fnv1a(sentence_id);
  std::vector<int64_t> durs(src_ids.size());
  int64_t total = 0;
  for (size_t i = 0; i < src_ids.size(); ++i) {
    durs[i] = 2 + static_cast<int64_t>(hash_combine(hash_combine(seed, sid), i) % 3);
    total += durs[i];
  }
  TensorF frames({total, spec.d_frames});
  Rng noise(hash_combine(hash_combine(seed, sid), 0x6e6f6973));
  int64_t row = 0;
  for (size_t i = 0; i < src_ids.size(); ++i) {
    const int32_t tok = src_ids[i] - Vocabulary::kSpecials;
    if (tok < 0 || tok >= static_cast<int32_t>(spec.base.size()))
      throw IndexError("render_speech: token id " + std::to_string(src_ids[i]) + " has no base vector");
    const auto& base = spec.base[static_cast<size_t>(tok)];
    for (int64_t r = 0; r < durs[i]; ++r, ++row) {
      for (int64_t j = 0; j < spec.d_frames; ++j) {
        frames.at(row, j) = base[static_cast<size_t>(j)] +
                            static_cast<float>(spec.noise_sigma * noise.normal());
      }
    }
  }
  return frames;
}

// ----- corpus files ---------------------------------------------------------

namespace {

void append_float(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  out += buf;
}

void append_ids(std::string& out, const std::vector<int32_t>& ids) {
  out += '[';
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
  out += ']';
}

}  // namespace

void write_corpus(const std::vector<Triple>& triples, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("write_corpus: cannot open " + path);
  std::string line;
  for (const auto& tr : triples) {
    line.clear();
    line += R"({"schema":"pcst-1","id":")";
    line += tr.id;
    line += R"(","src":)";
    append_ids(line, tr.src);
    line += R"(,"tgt":)";
    if (tr.tgt.empty()) {
      line += "null";
    } else {
      append_ids(line, tr.tgt);
    }
    line += R"(,"frames":{"t":)";
    line += std::to_string(tr.frames.rows());
    line += R"(,"d":)";
    line += std::to_string(tr.frames.cols());
    line += R"(,"data":[)";
    for (int64_t i = 0; i < tr.frames.numel(); ++i) {
      if (i) line += ',';
      append_float(line, static_cast<double>(tr.frames.at(i)));
    }
    line += "]}}\n";
    f << line;
  }
  if (!f) throw ConfigError("write_corpus: write failed for " + path);
}

std::vector<Triple> read_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("read_corpus: cannot open " + path);
  std::vector<Triple> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ParseError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      const std::string schema = j.at("schema").get<std::string>();
      if (schema != "pcst-1")
        throw VersionError(path + ": line " + std::to_string(lineno) + ": unknown schema '" +
                           schema + "'");
      Triple tr;
      tr.id = j.at("id").get<std::string>();
      tr.src = j.at("src").get<std::vector<int32_t>>();
      if (!j.at("tgt").is_null()) tr.tgt = j.at("tgt").get<std::vector<int32_t>>();
      const auto& fr = j.at("frames");
      const int64_t t = fr.at("t").get<int64_t>();
      const int64_t d = fr.at("d").get<int64_t>();
      std::vector<float> data = fr.at("data").get<std::vector<float>>();
      if (static_cast<int64_t>(data.size()) != t * d)
        throw ParseError(path + ": line " + std::to_string(lineno) + ": frame payload size " +
                         std::to_string(data.size()) + " != t*d");
      tr.frames = TensorF({t, d}, std::move(data));
      if (tr.src.empty())
        throw ParseError(path + ": line " + std::to_string(lineno) + ": empty transcription");
      out.push_back(std::move(tr));
    } catch (const json::exception& e) {
      throw ParseError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<DurationBucket> bucket_by_duration(const std::vector<Triple>& corpus, int n) {
  if (corpus.empty()) throw UsageError("bucket_by_duration: empty corpus");
  if (n < 1 || static_cast<size_t>(n) > corpus.size())
    throw ConfigError("bucket_by_duration: cannot make " + std::to_string(n) + " buckets from " +
                      std::to_string(corpus.size()) + " items");
  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (corpus[a].duration() != corpus[b].duration())
      return corpus[a].duration() < corpus[b].duration();
    return corpus[a].id < corpus[b].id;
  });
  const size_t q = corpus.size() / static_cast<size_t>(n);
  const size_t r = corpus.size() % static_cast<size_t>(n);
  std::vector<DurationBucket> buckets;
  size_t pos = 0;
  for (int b = 0; b < n; ++b) {
    const size_t take = q + (static_cast<size_t>(b) < r ? 1 : 0);
    DurationBucket bucket;
    bucket.items.assign(order.begin() + static_cast<int64_t>(pos),
                        order.begin() + static_cast<int64_t>(pos + take));
    bucket.min_dur = corpus[bucket.items.front()].duration();
    bucket.max_dur = corpus[bucket.items.back()].duration();
    buckets.push_back(std::move(bucket));
    pos += take;
  }
  return buckets;
}

// ----- world generation ------------------------------------------------------

namespace {

std::vector<int32_t> sample_sentence(const LanguageSpec& lang, const Vocabulary& vocab, Rng& rng) {
  const int32_t len =
      lang.len_min + static_cast<int32_t>(rng.uniform_int(lang.len_max - lang.len_min + 1));
  std::vector<int32_t> s(static_cast<size_t>(len));
  for (auto& tok : s) tok = vocab.src_id(static_cast<int32_t>(rng.uniform_int(lang.n_src)));
  return s;
}

std::vector<std::vector<int32_t>> sample_unique(const LanguageSpec& lang, const Vocabulary& vocab,
                                                int64_t count, Rng& rng,
                                                std::set<std::vector<int32_t>>& used) {
  std::vector<std::vector<int32_t>> out;
  out.reserve(static_cast<size_t>(count));
  int64_t rejected = 0;
  while (static_cast<int64_t>(out.size()) < count) {
    auto s = sample_sentence(lang, vocab, rng);
    if (used.insert(s).second) {
      out.push_back(std::move(s));
      rejected = 0;
    } else if (++rejected > 100000) {
      throw ConfigError("gen_world: sentence space exhausted, splits would overlap");
    }
  }
  return out;
}

std::vector<Triple> make_triples(const World& world, const std::string& prefix,
                                 const std::vector<std::vector<int32_t>>& sentences,
                                 bool with_translation) {
  std::vector<Triple> out;
  out.reserve(sentences.size());
  for (size_t i = 0; i < sentences.size(); ++i) {
    Triple tr;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s-%06zu", prefix.c_str(), i);
    tr.id = buf;
    tr.src = sentences[i];
    if (with_translation) tr.tgt = translate_text(tr.src, world.lang);
    tr.frames = render_speech(tr.src, tr.id, world.render, world.cfg.seed);
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace

std::string corpus_path(const std::string& dir, const std::string& kind, const std::string& split) {
  return dir + "/" + kind + "-" + split + ".jsonl";
}

World gen_world(const WorldConfig& cfg, const std::string& outdir) {
  for (int64_t size : {cfg.st_train, cfg.st_dev, cfg.st_test, cfg.asr_train, cfg.asr_dev,
                       cfg.text_train, cfg.text_dev}) {
    if (size <= 0) throw ConfigError("gen_world: split sizes must be positive");
  }
  World world;
  world.cfg = cfg;
  world.lang = build_language(cfg.seed, cfg.n_src);
  world.render = build_render(world.lang, cfg.d_frames, cfg.noise_sigma);
  const Vocabulary vocab = world.lang.vocab();

  std::filesystem::create_directories(outdir);
  Rng rng(hash_combine(cfg.seed, 0x73616d70));
  std::set<std::vector<int32_t>> used;

  struct Split {
    const char* kind;
    const char* split;
    int64_t size;
    bool with_translation;
  };
  const Split splits[] = {
      {"st", "train", cfg.st_train, true},     {"st", "dev", cfg.st_dev, true},
      {"st", "test", cfg.st_test, true},       {"asr", "train", cfg.asr_train, false},
      {"asr", "dev", cfg.asr_dev, false},      {"text", "train", cfg.text_train, true},
      {"text", "dev", cfg.text_dev, true},
  };
  for (const auto& sp : splits) {
    auto sentences = sample_unique(world.lang, vocab, sp.size, rng, used);
    const std::string prefix = std::string(sp.kind) + "-" + sp.split;
    auto triples = make_triples(world, prefix, sentences, sp.with_translation);
    write_corpus(triples, corpus_path(outdir, sp.kind, sp.split));
  }

  json manifest;
  manifest["schema"] = "pcst-manifest-1";
  manifest["preset"] = cfg.preset;
  manifest["seed"] = cfg.seed;
  manifest["language"] = {{"n_src", world.lang.n_src},
                          {"lexicon", world.lang.lexicon},
                          {"len_min", world.lang.len_min},
                          {"len_max", world.lang.len_max},
                          {"seed", world.lang.seed}};
  manifest["render"] = {{"d_frames", world.render.d_frames},
                        {"noise_sigma", world.render.noise_sigma},
                        {"base", world.render.base}};
  manifest["splits"] = {{"st_train", cfg.st_train}, {"st_dev", cfg.st_dev},
                        {"st_test", cfg.st_test},   {"asr_train", cfg.asr_train},
                        {"asr_dev", cfg.asr_dev},   {"text_train", cfg.text_train},
                        {"text_dev", cfg.text_dev}};
  manifest["n_src"] = cfg.n_src;
  manifest["vocab_total"] = vocab.total();
  std::ofstream mf(outdir + "/manifest.json", std::ios::binary);
  mf << manifest.dump(2) << "\n";
  if (!mf) throw ConfigError("gen_world: cannot write manifest");
  return world;
}

World load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("load_manifest: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (j.value("schema", "") != "pcst-manifest-1")
    throw VersionError(path + ": unknown manifest schema");
  World world;
  world.cfg.seed = j.at("seed").get<uint64_t>();
  world.cfg.n_src = j.at("n_src").get<int32_t>();
  world.cfg.preset = j.value("preset", "custom");
  const auto& lang = j.at("language");
  world.lang.n_src = lang.at("n_src").get<int32_t>();
  world.lang.lexicon = lang.at("lexicon").get<std::vector<int32_t>>();
  world.lang.len_min = lang.at("len_min").get<int32_t>();
  world.lang.len_max = lang.at("len_max").get<int32_t>();
  world.lang.seed = lang.at("seed").get<uint64_t>();
  const auto& render = j.at("render");
  world.render.d_frames = render.at("d_frames").get<int64_t>();
  world.render.noise_sigma = render.at("noise_sigma").get<double>();
  world.render.base = render.at("base").get<std::vector<std::vector<float>>>();
  const auto& splits = j.at("splits");
  world.cfg.st_train = splits.at("st_train").get<int64_t>();
  world.cfg.st_dev = splits.at("st_dev").get<int64_t>();
  world.cfg.st_test = splits.at("st_test").get<int64_t>();
  world.cfg.asr_train = splits.at("asr_train").get<int64_t>();
  world.cfg.asr_dev = splits.at("asr_dev").get<int64_t>();
  world.cfg.text_train = splits.at("text_train").get<int64_t>();
  world.cfg.text_dev = splits.at("text_dev").get<int64_t>();
  world.cfg.d_frames = world.render.d_frames;
  world.cfg.noise_sigma = world.render.noise_sigma;
  return world;
}

}  // namespace pcst
