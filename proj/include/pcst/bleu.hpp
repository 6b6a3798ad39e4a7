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

#ifndef PCST_BLEU_HPP
#define PCST_BLEU_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pcst/data.hpp"
#include "pcst/model.hpp"

namespace pcst {

// Additive corpus-level n-gram statistics (n = 1..4).
struct NgramStats {
  std::array<int64_t, 4> matches{};  // clipped
  std::array<int64_t, 4> totals{};
  int64_t hyp_len = 0;
  int64_t ref_len = 0;

  NgramStats& operator+=(const NgramStats& o);
};

NgramStats ngram_stats(const std::vector<int32_t>& hyp, const std::vector<int32_t>& ref);

struct BleuBucket {
  int64_t min_dur = 0;
  int64_t max_dur = 0;
  int64_t count = 0;
  double bleu = 0.0;
};

struct BleuReport {
  double bleu = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  double bp = 1.0;
  int64_t hyp_len = 0;
  int64_t ref_len = 0;
  std::vector<BleuBucket> buckets;
};

// BP * exp(mean log pn) over pooled statistics; any pn = 0 gives BLEU 0
// unless floor smoothing is requested.
BleuReport bleu_from_stats(const NgramStats& stats, bool floor_smoothing = false);

BleuReport corpus_bleu(const std::vector<std::vector<int32_t>>& hyps,
                       const std::vector<std::vector<int32_t>>& refs,
                       bool floor_smoothing = false);

// ----- end-to-end evaluation ----------------------------------------------------

struct EvalSentence {
  std::string id;
  int64_t duration = 0;
  std::vector<int32_t> hyp;
  std::vector<int32_t> ref;
  double logprob = 0.0;
  bool finished = false;
};

struct EvalResult {
  BleuReport report;
  std::vector<EvalSentence> sentences;
};

// Decodes every example with the given beam and reports overall plus
// five duration-bucketed BLEU scores.
EvalResult evaluate(const ParamStoreF& params, const ModelConfig& cfg,
                    const std::vector<Triple>& corpus, int64_t beam, int64_t max_len = 64,
                    int n_buckets = 5);

}  // namespace pcst

#endif  // PCST_BLEU_HPP
