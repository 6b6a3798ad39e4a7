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

#ifndef PCST_DATA_HPP
#define PCST_DATA_HPP

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pcst/tensor.hpp"
#include "pcst/vocab.hpp"

namespace pcst {

// One training example: speech frames plus transcription and (for ST)
// translation, all in the unified id space.
struct Triple {
  std::string id;
  TensorF frames;               // [T x d_frames]
  std::vector<int32_t> src;     // transcription, non-empty
  std::vector<int32_t> tgt;     // translation; empty for ASR examples
  int64_t duration() const { return frames.rows(); }
};

// The toy language pair: a lexicon bijection plus adjacent-pair reordering.
struct LanguageSpec {
  int32_t n_src = 0;                 // target vocabulary has the same size
  std::vector<int32_t> lexicon;      // pi: source index -> target index
  int32_t len_min = 3;
  int32_t len_max = 12;
  uint64_t seed = 0;

  Vocabulary vocab() const { return Vocabulary{n_src, n_src}; }
};

// Acoustic rendering: one base vector per source token; each occurrence is
// repeated for a hashed duration in {2,3,4} frames with gaussian noise.
struct RenderSpec {
  int64_t d_frames = 16;
  double noise_sigma = 0.1;
  std::vector<std::vector<float>> base;  // [n_src][d_frames]
};

LanguageSpec build_language(uint64_t seed, int32_t n_src);
RenderSpec build_render(const LanguageSpec& lang, int64_t d_frames, double noise_sigma);

// Map through the lexicon, then swap adjacent pairs (odd trailing token
// keeps its place). Length-preserving and injective.
std::vector<int32_t> translate_text(const std::vector<int32_t>& src_ids, const LanguageSpec& lang);

TensorF render_speech(const std::vector<int32_t>& src_ids, const std::string& sentence_id,
                      const RenderSpec& spec, uint64_t seed);

uint64_t fnv1a(const std::string& s);

// ----- corpus files ---------------------------------------------------------

// JSONL, schema "pcst-1"; see write_corpus for the line format.
void write_corpus(const std::vector<Triple>& triples, const std::string& path);
std::vector<Triple> read_corpus(const std::string& path);

// Quantile buckets by frame count; sizes differ by at most one and ties
// fall back to id order. Returns index groups plus [min,max] durations.
struct DurationBucket {
  std::vector<size_t> items;
  int64_t min_dur = 0;
  int64_t max_dur = 0;
};
std::vector<DurationBucket> bucket_by_duration(const std::vector<Triple>& corpus, int n = 5);

// ----- world generation ------------------------------------------------------

struct WorldConfig {
  uint64_t seed = 1;
  int32_t n_src = 18;
  int64_t d_frames = 16;
  double noise_sigma = 0.1;
  int64_t st_train = 8000, st_dev = 500, st_test = 500;
  int64_t asr_train = 16000, asr_dev = 500;
  int64_t text_train = 16000, text_dev = 500;
  std::string preset = "toy";
};

struct World {
  WorldConfig cfg;
  LanguageSpec lang;
  RenderSpec render;
};

// Generates the ST / ASR / parallel-text corpora with pairwise-disjoint
// sentence sets, writes JSONL splits plus manifest.json, returns the world.
World gen_world(const WorldConfig& cfg, const std::string& outdir);

World load_manifest(const std::string& path);

std::string corpus_path(const std::string& dir, const std::string& kind, const std::string& split);

}  // namespace pcst

#endif  // PCST_DATA_HPP
