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

#ifndef PCST_DECODE_HPP
#define PCST_DECODE_HPP

#include <memory>
#include <vector>

#include "pcst/model.hpp"

namespace pcst {

// Decoded candidate; score is the length-normalized log-probability.
struct Hypothesis {
  std::vector<int32_t> tokens;  // generated tokens, EOS included when finished
  double logprob = 0.0;
  bool finished = false;

  double score() const {
    return tokens.empty() ? 0.0 : logprob / static_cast<double>(tokens.size());
  }
};

// Incremental next-token model. Implementations own whatever cached state a
// consumed prefix requires; clone() must copy it so beams can branch.
class DecoderSession {
 public:
  virtual ~DecoderSession() = default;
  virtual int32_t vocab() const = 0;
  virtual int32_t eos() const = 0;
  // Log-probabilities of the next token given the consumed prefix.
  virtual std::vector<double> next_logprobs() const = 0;
  virtual void advance(int32_t token) = 0;
  virtual std::unique_ptr<DecoderSession> clone() const = 0;
};

// Argmax continuation (ties to the lowest id) until EOS or max_len.
Hypothesis greedy_decode(const DecoderSession& start, int64_t max_len = 64);

// Length-synchronous beam with retirement; the best retired hypothesis by
// normalized score wins, ties by lexicographic token order.
Hypothesis beam_search(const DecoderSession& start, int64_t beam, int64_t max_len = 64);

// KV-cached incremental evaluation of the backend behind [prompt][SEP].
class BackendSession : public DecoderSession {
 public:
  BackendSession(const ParamStoreF& params, const ModelConfig& cfg, const TensorF& prompt);
  int32_t vocab() const override;
  int32_t eos() const override { return Vocabulary::kEos; }
  std::vector<double> next_logprobs() const override;
  void advance(int32_t token) override;
  std::unique_ptr<DecoderSession> clone() const override;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;  // copied on clone
  BackendSession() = default;
};

// Frontend + adapter forward for one utterance (no gradients).
TensorF encode_prompt(const ParamStoreF& params, const ModelConfig& cfg, const TensorF& frames);

// Teacher-forced per-position logits for one utterance (testing aid).
TensorF teacher_logits(const ParamStoreF& params, const ModelConfig& cfg, const TensorF& frames,
                       const std::vector<int32_t>& labels);

}  // namespace pcst

#endif  // PCST_DECODE_HPP
