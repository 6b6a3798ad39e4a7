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

#include "pcst/bleu.hpp"

#include <cmath>
#include <map>

#include "pcst/decode.hpp"

namespace pcst {

NgramStats& NgramStats::operator+=(const NgramStats& o) {
  for (int n = 0; n < 4; ++n) {
    matches[static_cast<size_t>(n)] += o.matches[static_cast<size_t>(n)];
    totals[static_cast<size_t>(n)] += o.totals[static_cast<size_t>(n)];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

NgramStats ngram_stats(const std::vector<int32_t>& hyp, const std::vector<int32_t>& ref) {
  NgramStats st;
  st.hyp_len = static_cast<int64_t>(hyp.size());
  st.ref_len = static_cast<int64_t>(ref.size());
  for (int n = 1; n <= 4; ++n) {
    if (static_cast<int64_t>(hyp.size()) < n) continue;
    std::map<std::vector<int32_t>, int64_t> ref_counts;
    for (size_t i = 0; i + n <= ref.size(); ++i)
      ++ref_counts[std::vector<int32_t>(ref.begin() + static_cast<int64_t>(i),
                                        ref.begin() + static_cast<int64_t>(i + n))];
    std::map<std::vector<int32_t>, int64_t> hyp_counts;
    for (size_t i = 0; i + n <= hyp.size(); ++i)
      ++hyp_counts[std::vector<int32_t>(hyp.begin() + static_cast<int64_t>(i),
                                        hyp.begin() + static_cast<int64_t>(i + n))];
    int64_t match = 0, total = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) match += std::min(count, it->second);
    }
    st.matches[static_cast<size_t>(n - 1)] = match;
    st.totals[static_cast<size_t>(n - 1)] = total;
  }
  return st;
}

BleuReport bleu_from_stats(const NgramStats& stats, bool floor_smoothing) {
  BleuReport rep;
  rep.hyp_len = stats.hyp_len;
  rep.ref_len = stats.ref_len;
  bool zero = false;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    const int64_t total = stats.totals[static_cast<size_t>(n)];
    const int64_t match = stats.matches[static_cast<size_t>(n)];
    double p = (total > 0) ? static_cast<double>(match) / static_cast<double>(total) : 0.0;
    rep.precisions[static_cast<size_t>(n)] = p;
    if (p <= 0.0) {
      if (floor_smoothing && total > 0) {
        p = 1.0 / (2.0 * static_cast<double>(total));
      } else {
        zero = true;
        continue;
      }
    }
    log_sum += std::log(p);
  }
  if (stats.hyp_len == 0) {
    rep.bp = 0.0;
    rep.bleu = 0.0;
    return rep;
  }
  rep.bp = (stats.hyp_len >= stats.ref_len)
               ? 1.0
               : std::exp(1.0 - static_cast<double>(stats.ref_len) /
                                    static_cast<double>(stats.hyp_len));
  rep.bleu = zero ? 0.0 : 100.0 * rep.bp * std::exp(log_sum / 4.0);
  return rep;
}

BleuReport corpus_bleu(const std::vector<std::vector<int32_t>>& hyps,
                       const std::vector<std::vector<int32_t>>& refs, bool floor_smoothing) {
  if (hyps.size() != refs.size())
    throw UsageError("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                     std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw UsageError("corpus_bleu: empty corpus");
  NgramStats pooled;
  for (size_t i = 0; i < hyps.size(); ++i) pooled += ngram_stats(hyps[i], refs[i]);
  return bleu_from_stats(pooled, floor_smoothing);
}

EvalResult evaluate(const ParamStoreF& params, const ModelConfig& cfg,
                    const std::vector<Triple>& corpus, int64_t beam, int64_t max_len,
                    int n_buckets) {
  if (corpus.empty()) throw UsageError("evaluate: empty corpus");
  EvalResult result;
  result.sentences.reserve(corpus.size());
  for (const auto& tr : corpus) {
    if (tr.tgt.empty()) throw UsageError("evaluate: example " + tr.id + " has no reference");
    const TensorF prompt = encode_prompt(params, cfg, tr.frames);
    BackendSession session(params, cfg, prompt);
    Hypothesis hyp = (beam == 1) ? greedy_decode(session, max_len)
                                 : beam_search(session, beam, max_len);
    EvalSentence s;
    s.id = tr.id;
    s.duration = tr.duration();
    s.hyp = hyp.tokens;
    if (hyp.finished && !s.hyp.empty() && s.hyp.back() == Vocabulary::kEos) s.hyp.pop_back();
    s.ref = tr.tgt;
    s.logprob = hyp.logprob;
    s.finished = hyp.finished;
    result.sentences.push_back(std::move(s));
  }

  NgramStats pooled;
  for (const auto& s : result.sentences) pooled += ngram_stats(s.hyp, s.ref);
  result.report = bleu_from_stats(pooled);

  const auto buckets = bucket_by_duration(corpus, n_buckets);
  for (const auto& bucket : buckets) {
    NgramStats st;
    for (size_t idx : bucket.items) st += ngram_stats(result.sentences[idx].hyp,
                                                      result.sentences[idx].ref);
    BleuBucket bb;
    bb.min_dur = bucket.min_dur;
    bb.max_dur = bucket.max_dur;
    bb.count = static_cast<int64_t>(bucket.items.size());
    bb.bleu = bleu_from_stats(st).bleu;
    result.report.buckets.push_back(bb);
  }
  return result;
}

}  // namespace pcst
