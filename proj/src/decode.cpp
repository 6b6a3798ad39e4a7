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

#include "pcst/decode.hpp"

#include <algorithm>
#include <cmath>

namespace pcst {

// ----- search ----------------------------------------------------------------

Hypothesis greedy_decode(const DecoderSession& start, int64_t max_len) {
  if (max_len < 1) throw UsageError("greedy_decode: max_len must be >= 1");
  auto session = start.clone();
  Hypothesis hyp;
  for (int64_t step = 0; step < max_len; ++step) {
    const auto lp = session->next_logprobs();
    int32_t best = 0;
    for (int32_t tok = 1; tok < static_cast<int32_t>(lp.size()); ++tok) {
      if (lp[static_cast<size_t>(tok)] > lp[static_cast<size_t>(best)]) best = tok;
    }
    hyp.tokens.push_back(best);
    hyp.logprob += lp[static_cast<size_t>(best)];
    if (best == session->eos()) {
      hyp.finished = true;
      break;
    }
    session->advance(best);
  }
  return hyp;
}

namespace {

struct Beam {
  Hypothesis hyp;
  std::unique_ptr<DecoderSession> session;
};

bool better_normalized(const Hypothesis& a, const Hypothesis& b) {
  if (a.score() != b.score()) return a.score() > b.score();
  return a.tokens < b.tokens;  // lexicographic tie-break
}

}  // namespace

Hypothesis beam_search(const DecoderSession& start, int64_t beam, int64_t max_len) {
  if (beam < 1) throw ConfigError("beam_search: beam size must be >= 1");
  if (max_len < 1) throw UsageError("beam_search: max_len must be >= 1");

  std::vector<Beam> active;
  active.push_back({Hypothesis{}, start.clone()});
  std::vector<Hypothesis> pool;

  struct Cand {
    double logprob;
    size_t parent;
    int32_t token;
  };

  for (int64_t step = 0; step < max_len && !active.empty(); ++step) {
    std::vector<Cand> cands;
    std::vector<std::vector<int32_t>> prefixes;
    prefixes.reserve(active.size());
    for (size_t i = 0; i < active.size(); ++i) {
      prefixes.push_back(active[i].hyp.tokens);
      const auto lp = active[i].session->next_logprobs();
      for (int32_t tok = 0; tok < static_cast<int32_t>(lp.size()); ++tok) {
        cands.push_back({active[i].hyp.logprob + lp[static_cast<size_t>(tok)], i, tok});
      }
    }
    const size_t keep = std::min<size_t>(static_cast<size_t>(beam), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<int64_t>(keep), cands.end(),
                      [&](const Cand& a, const Cand& b) {
                        if (a.logprob != b.logprob) return a.logprob > b.logprob;
                        if (prefixes[a.parent] != prefixes[b.parent])
                          return prefixes[a.parent] < prefixes[b.parent];
                        return a.token < b.token;
                      });
    std::vector<Beam> next;
    for (size_t c = 0; c < keep; ++c) {
      const Cand& cand = cands[c];
      Hypothesis hyp = active[cand.parent].hyp;
      hyp.tokens.push_back(cand.token);
      hyp.logprob = cand.logprob;
      if (cand.token == start.eos()) {
        hyp.finished = true;
        pool.push_back(std::move(hyp));
      } else {
        auto session = active[cand.parent].session->clone();
        session->advance(cand.token);
        next.push_back({std::move(hyp), std::move(session)});
      }
    }
    active = std::move(next);
  }

  if (pool.empty()) {
    // Nothing finished within max_len; fall back to the best running beam.
    for (auto& b : active) pool.push_back(std::move(b.hyp));
    if (pool.empty()) throw IntegrityError("beam_search: no hypotheses");
  }
  Hypothesis best = pool.front();
  for (size_t i = 1; i < pool.size(); ++i) {
    if (better_normalized(pool[i], best)) best = pool[i];
  }
  return best;
}

// ----- backend session ---------------------------------------------------------

namespace {

// Row-level forward pieces, numerically identical to the tape versions.
void layer_norm_row(const float* x, const float* g, const float* b, float* y, int64_t d) {
  double mu = 0.0;
  for (int64_t j = 0; j < d; ++j) mu += static_cast<double>(x[j]);
  mu /= static_cast<double>(d);
  double var = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    const double t = static_cast<double>(x[j]) - mu;
    var += t * t;
  }
  var /= static_cast<double>(d);
  const double is = 1.0 / std::sqrt(var + 1e-5);
  for (int64_t j = 0; j < d; ++j)
    y[j] = g[j] * static_cast<float>((static_cast<double>(x[j]) - mu) * is) + b[j];
}

void linear_row(const float* x, const TensorF& w, const TensorF& b, float* y) {
  const int64_t k = w.extent(0), n = w.extent(1);
  kern::ref::matmul_nn(x, w.data(), y, 1, k, n);
  for (int64_t j = 0; j < n; ++j) y[j] += b.at(j);
}

}  // namespace

struct BackendSession::Impl {
  const ParamStoreF* params;
  const ModelConfig* cfg;
  int64_t pos = 0;  // rows consumed
  // per block: cached K and V rows, d_llm apart
  std::vector<std::vector<float>> k_cache, v_cache;
  std::vector<float> last_logits;
  std::vector<double> pe_freqs;

  Impl(const ParamStoreF& p, const ModelConfig& c)
      : params(&p), cfg(&c), pe_freqs(TapeF::posenc_freqs(c.d_llm)) {
    k_cache.resize(static_cast<size_t>(c.dec_blocks));
    v_cache.resize(static_cast<size_t>(c.dec_blocks));
  }

  // Feed one input row (already embedded, before position encoding).
  void feed(const float* row_in) {
    const int64_t d = cfg->d_llm;
    const int64_t heads = cfg->dec_heads;
    const int64_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<float> x(row_in, row_in + d);
    TapeF::apply_posenc_row(x.data(), pos, d, pe_freqs);

    std::vector<float> ln(static_cast<size_t>(d)), q(static_cast<size_t>(d)),
        kx(static_cast<size_t>(d)), vx(static_cast<size_t>(d)), att(static_cast<size_t>(d)),
        proj(static_cast<size_t>(d));
    std::vector<float> ff1(static_cast<size_t>(d * cfg->ffn_mult));
    for (int64_t blk = 0; blk < cfg->dec_blocks; ++blk) {
      const std::string prefix = "backend.block" + std::to_string(blk);
      layer_norm_row(x.data(), params->at(prefix + ".ln1.g").data(),
                     params->at(prefix + ".ln1.b").data(), ln.data(), d);
      linear_row(ln.data(), params->at(prefix + ".attn.wq"), params->at(prefix + ".attn.bq"),
                 q.data());
      linear_row(ln.data(), params->at(prefix + ".attn.wk"), params->at(prefix + ".attn.bk"),
                 kx.data());
      linear_row(ln.data(), params->at(prefix + ".attn.wv"), params->at(prefix + ".attn.bv"),
                 vx.data());
      auto& kc = k_cache[static_cast<size_t>(blk)];
      auto& vc = v_cache[static_cast<size_t>(blk)];
      kc.insert(kc.end(), kx.begin(), kx.end());
      vc.insert(vc.end(), vx.begin(), vx.end());
      const int64_t len = pos + 1;
      // one causal attention row over the cache, per head
      std::vector<double> srow(static_cast<size_t>(len));
      for (int64_t h = 0; h < heads; ++h) {
        const int64_t hoff = h * dh;
        double mx = -1e300;
        for (int64_t j = 0; j < len; ++j) {
          double s = 0.0;
          const float* kj = kc.data() + j * d + hoff;
          for (int64_t t = 0; t < dh; ++t)
            s += static_cast<double>(q[static_cast<size_t>(hoff + t)]) * static_cast<double>(kj[t]);
          s *= scale;
          srow[static_cast<size_t>(j)] = s;
          mx = std::max(mx, s);
        }
        double sum = 0.0;
        for (int64_t j = 0; j < len; ++j) {
          const double e = std::exp(srow[static_cast<size_t>(j)] - mx);
          srow[static_cast<size_t>(j)] = e;
          sum += e;
        }
        const double inv = 1.0 / sum;
        for (int64_t t = 0; t < dh; ++t) att[static_cast<size_t>(hoff + t)] = 0.0f;
        for (int64_t j = 0; j < len; ++j) {
          const float pij = static_cast<float>(srow[static_cast<size_t>(j)] * inv);
          const float* vj = vc.data() + j * d + hoff;
          for (int64_t t = 0; t < dh; ++t) att[static_cast<size_t>(hoff + t)] += pij * vj[t];
        }
      }
      linear_row(att.data(), params->at(prefix + ".attn.wo"), params->at(prefix + ".attn.bo"),
                 proj.data());
      for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(j)] += proj[static_cast<size_t>(j)];
      layer_norm_row(x.data(), params->at(prefix + ".ln2.g").data(),
                     params->at(prefix + ".ln2.b").data(), ln.data(), d);
      linear_row(ln.data(), params->at(prefix + ".ffn.w1"), params->at(prefix + ".ffn.b1"),
                 ff1.data());
      kern::ref::gelu_forward(ff1.data(), ff1.data(), d * cfg->ffn_mult);
      std::vector<float> ff2(static_cast<size_t>(d));
      const TensorF& w2 = params->at(prefix + ".ffn.w2");
      kern::ref::matmul_nn(ff1.data(), w2.data(), ff2.data(), 1, d * cfg->ffn_mult, d);
      const TensorF& b2 = params->at(prefix + ".ffn.b2");
      for (int64_t j = 0; j < d; ++j) {
        const float f2 = ff2[static_cast<size_t>(j)] + b2.at(j);
        x[static_cast<size_t>(j)] += f2;
      }
    }
    layer_norm_row(x.data(), params->at("backend.final_ln.g").data(),
                   params->at("backend.final_ln.b").data(), ln.data(), d);
    const TensorF& emb = params->at("backend.embed");
    last_logits.assign(static_cast<size_t>(cfg->vocab_total), 0.0f);
    for (int32_t v = 0; v < cfg->vocab_total; ++v) {
      double s = 0.0;
      const float* erow = emb.data() + static_cast<int64_t>(v) * d;
      for (int64_t j = 0; j < d; ++j)
        s += static_cast<double>(ln[static_cast<size_t>(j)]) * static_cast<double>(erow[j]);
      last_logits[static_cast<size_t>(v)] = static_cast<float>(s);
    }
    ++pos;
  }

  void feed_token(int32_t token) {
    const TensorF& emb = params->at("backend.embed");
    if (token < 0 || token >= cfg->vocab_total)
      throw IndexError("backend session: token " + std::to_string(token) + " out of range");
    // same sqrt(d) embedding scale as the training-side forward
    const float scale = static_cast<float>(std::sqrt(static_cast<double>(cfg->d_llm)));
    const float* row = emb.data() + static_cast<int64_t>(token) * cfg->d_llm;
    std::vector<float> scaled(static_cast<size_t>(cfg->d_llm));
    for (int64_t j = 0; j < cfg->d_llm; ++j) scaled[static_cast<size_t>(j)] = scale * row[j];
    feed(scaled.data());
  }
};

BackendSession::BackendSession(const ParamStoreF& params, const ModelConfig& cfg,
                               const TensorF& prompt) {
  impl_ = std::make_shared<Impl>(params, cfg);
  if (prompt.cols() != cfg.d_llm)
    throw DimensionError("backend session: prompt width " + std::to_string(prompt.cols()) +
                         " vs d_llm " + std::to_string(cfg.d_llm));
  for (int64_t i = 0; i < prompt.rows(); ++i) impl_->feed(prompt.data() + i * cfg.d_llm);
  impl_->feed_token(Vocabulary::kSep);
}

int32_t BackendSession::vocab() const { return impl_->cfg->vocab_total; }

std::vector<double> BackendSession::next_logprobs() const {
  const auto& logits = impl_->last_logits;
  std::vector<double> lp(logits.size());
  double mx = -1e300;
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    lp[i] = static_cast<double>(logits[i]) - mx;
    sum += std::exp(lp[i]);
  }
  const double lse = std::log(sum);
  for (auto& v : lp) v -= lse;
  return lp;
}

void BackendSession::advance(int32_t token) { impl_->feed_token(token); }

std::unique_ptr<DecoderSession> BackendSession::clone() const {
  auto copy = std::unique_ptr<BackendSession>(new BackendSession());
  copy->impl_ = std::make_shared<Impl>(*impl_);  // deep copy of caches
  return copy;
}

// ----- prompt encoding -----------------------------------------------------------

TensorF encode_prompt(const ParamStoreF& params, const ModelConfig& cfg, const TensorF& frames) {
  ParamStoreF frozen = params;
  frozen.freeze(Group::frontend);
  frozen.freeze(Group::adapter);
  frozen.freeze(Group::backend);
  TapeF tape;
  BoundParams<float> bp(tape, frozen);
  Segments seg = Segments::from_lengths({frames.rows()});
  auto rep = frontend_encode(tape, bp, cfg, frames, seg);
  auto prompt = adapt(tape, bp, cfg, rep);
  return tape.value(prompt.values);
}

TensorF teacher_logits(const ParamStoreF& params, const ModelConfig& cfg, const TensorF& frames,
                       const std::vector<int32_t>& labels) {
  ParamStoreF frozen = params;
  frozen.freeze(Group::frontend);
  frozen.freeze(Group::adapter);
  frozen.freeze(Group::backend);
  TapeF tape;
  BoundParams<float> bp(tape, frozen);
  Segments seg = Segments::from_lengths({frames.rows()});
  auto rep = frontend_encode(tape, bp, cfg, frames, seg);
  auto prompt = adapt(tape, bp, cfg, rep);
  auto logits = backend_forward(tape, bp, cfg, prompt, {labels});
  return tape.value(logits.values);
}

}  // namespace pcst
