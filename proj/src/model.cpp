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

#include "pcst/model.hpp"

#include <cmath>
#include <set>

namespace pcst {

std::string group_name(Group g) {
  switch (g) {
    case Group::frontend: return "frontend";
    case Group::adapter: return "adapter";
    case Group::backend: return "backend";
  }
  throw IntegrityError("unknown group");
}

Group group_from_name(const std::string& s) {
  if (s == "frontend") return Group::frontend;
  if (s == "adapter") return Group::adapter;
  if (s == "backend") return Group::backend;
  throw IntegrityError("unknown group name '" + s + "'");
}

std::map<Group, std::vector<std::string>> parameter_groups(const ParamStoreF& store) {
  std::map<Group, std::vector<std::string>> out;
  out[Group::frontend] = {};
  out[Group::adapter] = {};
  out[Group::backend] = {};
  std::set<std::string> seen;
  for (const auto& [name, e] : store) {
    if (!seen.insert(name).second) throw IntegrityError("parameter " + name + " tagged twice");
    out[e.group].push_back(name);
  }
  size_t total = 0;
  for (const auto& [g, names] : out) total += names.size();
  if (total != store.size()) throw IntegrityError("group partition does not cover the store");
  return out;
}

namespace {

struct Init {
  ParamStoreF& store;
  Rng rng;

  void matrix(const std::string& name, Group g, int64_t rows, int64_t cols) {
    const float std = 1.0f / std::sqrt(static_cast<float>(rows));
    store.add(name, g, TensorF::randn({rows, cols}, rng, std));
  }
  void conv(const std::string& name, Group g, int64_t k, int64_t cin, int64_t cout) {
    const float std = 1.0f / std::sqrt(static_cast<float>(k * cin));
    store.add(name, g, TensorF::randn({k, cin, cout}, rng, std));
  }
  void embedding(const std::string& name, Group g, int64_t v, int64_t d) {
    store.add(name, g, TensorF::randn({v, d}, rng, 0.05f));
  }
  void zeros(const std::string& name, Group g, std::vector<int64_t> shape) {
    store.add(name, g, TensorF(std::move(shape)));
  }
  void ones(const std::string& name, Group g, int64_t d) {
    store.add(name, g, TensorF::full({d}, 1.0f));
  }
  void block(const std::string& prefix, Group g, int64_t d, int64_t ffn_mult) {
    ones(prefix + ".ln1.g", g, d);
    zeros(prefix + ".ln1.b", g, {d});
    for (const char* w : {"wq", "wk", "wv", "wo"}) matrix(prefix + ".attn." + w, g, d, d);
    for (const char* b : {"bq", "bk", "bv", "bo"}) zeros(prefix + ".attn." + b, g, {d});
    ones(prefix + ".ln2.g", g, d);
    zeros(prefix + ".ln2.b", g, {d});
    matrix(prefix + ".ffn.w1", g, d, d * ffn_mult);
    zeros(prefix + ".ffn.b1", g, {d * ffn_mult});
    matrix(prefix + ".ffn.w2", g, d * ffn_mult, d);
    zeros(prefix + ".ffn.b2", g, {d});
  }
};

}  // namespace

ParamStoreF init_params(const ModelConfig& cfg, uint64_t seed) {
  ParamStoreF store;
  Init init{store, Rng(hash_combine(seed, 0x70637374))};
  init.matrix("frontend.embed.w", Group::frontend, cfg.d_frames, cfg.d_enc);
  init.zeros("frontend.embed.b", Group::frontend, {cfg.d_enc});
  for (int64_t i = 0; i < cfg.enc_blocks; ++i)
    init.block("frontend.block" + std::to_string(i), Group::frontend, cfg.d_enc, cfg.ffn_mult);

  init.conv("adapter.conv1.w", Group::adapter, ModelConfig::kConvKernel, cfg.d_enc, cfg.d_enc);
  init.zeros("adapter.conv1.b", Group::adapter, {cfg.d_enc});
  init.conv("adapter.conv2.w", Group::adapter, ModelConfig::kConvKernel, cfg.d_enc, cfg.d_enc);
  init.zeros("adapter.conv2.b", Group::adapter, {cfg.d_enc});
  init.matrix("adapter.proj.w", Group::adapter, cfg.d_enc, cfg.d_llm);
  init.zeros("adapter.proj.b", Group::adapter, {cfg.d_llm});

  init.embedding("backend.embed", Group::backend, cfg.vocab_total, cfg.d_llm);
  for (int64_t i = 0; i < cfg.dec_blocks; ++i)
    init.block("backend.block" + std::to_string(i), Group::backend, cfg.d_llm, cfg.ffn_mult);
  init.ones("backend.final_ln.g", Group::backend, cfg.d_llm);
  init.zeros("backend.final_ln.b", Group::backend, {cfg.d_llm});
  return store;
}

void add_ctc_head(ParamStoreF& store, const ModelConfig& cfg, int64_t ctc_classes, uint64_t seed) {
  Init init{store, Rng(hash_combine(seed, 0x637463))};
  init.matrix("frontend.aux_ctc.w", Group::frontend, cfg.d_enc, ctc_classes);
  init.zeros("frontend.aux_ctc.b", Group::frontend, {ctc_classes});
}

void add_ssl_head(ParamStoreF& store, const ModelConfig& cfg, uint64_t seed) {
  Init init{store, Rng(hash_combine(seed, 0x73736c))};
  store.add("frontend.aux_mask", Group::frontend, TensorF::randn({1, cfg.d_frames}, init.rng, 0.1f));
  init.matrix("frontend.aux_recon.w", Group::frontend, cfg.d_enc, cfg.d_frames);
  init.zeros("frontend.aux_recon.b", Group::frontend, {cfg.d_frames});
}

bool is_aux_param(const std::string& name) {
  return name.find(".aux_") != std::string::npos;
}

// ----- forward ---------------------------------------------------------------

namespace {

template <typename T>
using Ref = typename Tape<T>::Ref;

template <typename T>
Ref<T> linear(Tape<T>& t, const BoundParams<T>& bp, const std::string& prefix, Ref<T> x) {
  return t.add_bias_rows(t.matmul(x, bp.at(prefix + ".w")), bp.at(prefix + ".b"));
}

// Pre-norm residual block: x + Attn(LN(x)), then + FFN(LN(.)).
template <typename T>
Ref<T> transformer_block(Tape<T>& t, const BoundParams<T>& bp, const std::string& prefix,
                         Ref<T> x, const Segments& seg, int64_t heads, bool causal) {
  auto ln1 = t.layer_norm(x, bp.at(prefix + ".ln1.g"), bp.at(prefix + ".ln1.b"));
  auto q = t.add_bias_rows(t.matmul(ln1, bp.at(prefix + ".attn.wq")), bp.at(prefix + ".attn.bq"));
  auto k = t.add_bias_rows(t.matmul(ln1, bp.at(prefix + ".attn.wk")), bp.at(prefix + ".attn.bk"));
  auto v = t.add_bias_rows(t.matmul(ln1, bp.at(prefix + ".attn.wv")), bp.at(prefix + ".attn.bv"));
  auto att = t.attention(q, k, v, seg, heads, causal);
  auto proj = t.add_bias_rows(t.matmul(att, bp.at(prefix + ".attn.wo")), bp.at(prefix + ".attn.bo"));
  auto h = t.add(x, proj);
  auto ln2 = t.layer_norm(h, bp.at(prefix + ".ln2.g"), bp.at(prefix + ".ln2.b"));
  auto f1 = t.gelu(t.add_bias_rows(t.matmul(ln2, bp.at(prefix + ".ffn.w1")), bp.at(prefix + ".ffn.b1")));
  auto f2 = t.add_bias_rows(t.matmul(f1, bp.at(prefix + ".ffn.w2")), bp.at(prefix + ".ffn.b2"));
  return t.add(h, f2);
}

template <typename T>
Ref<T> decoder_stack(Tape<T>& t, const BoundParams<T>& bp, const ModelConfig& cfg, Ref<T> x,
                     const Segments& seg) {
  auto h = t.add_posenc(x, seg);
  for (int64_t i = 0; i < cfg.dec_blocks; ++i)
    h = transformer_block(t, bp, "backend.block" + std::to_string(i), h, seg, cfg.dec_heads, true);
  h = t.layer_norm(h, bp.at("backend.final_ln.g"), bp.at("backend.final_ln.b"));
  return t.matmul_nt(h, bp.at("backend.embed"));  // weight-tied output head
}

}  // namespace

template <typename T>
Packed<T> frontend_encode(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                          const Tensor<T>& frames, const Segments& seg) {
  if (frames.extent(frames.rank() - 1) != cfg.d_frames) {
    throw DimensionError("frontend_encode: frame width " +
                         std::to_string(frames.extent(frames.rank() - 1)) + " vs configured " +
                         std::to_string(cfg.d_frames));
  }
  if (frames.rows() != seg.total() || seg.total() < 1)
    throw DimensionError("frontend_encode: frame rows vs segments mismatch");
  auto x = tape.constant(frames);
  auto h = tape.add_bias_rows(tape.matmul(x, bp.at("frontend.embed.w")), bp.at("frontend.embed.b"));
  h = tape.add_posenc(h, seg);
  for (int64_t i = 0; i < cfg.enc_blocks; ++i) {
    h = transformer_block(tape, bp, "frontend.block" + std::to_string(i), h, seg, cfg.enc_heads,
                          /*causal=*/false);
  }
  return {h, seg};
}

template <typename T>
Packed<T> adapt(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                const Packed<T>& rep) {
  if (rep.seg.total() == 0) throw UsageError("adapt: empty input");
  const int64_t s = ModelConfig::kConvStride, p = ModelConfig::kConvPad;
  auto c1 = tape.gelu(
      tape.conv1d(rep.values, bp.at("adapter.conv1.w"), bp.at("adapter.conv1.b"), rep.seg, s, p));
  std::vector<int64_t> mid;
  for (int64_t l : rep.seg.len) mid.push_back(conv_out_len(l));
  Segments seg_mid = Segments::from_lengths(mid);
  auto c2 = tape.conv1d(c1, bp.at("adapter.conv2.w"), bp.at("adapter.conv2.b"), seg_mid, s, p);
  std::vector<int64_t> out;
  for (int64_t l : mid) out.push_back(conv_out_len(l));
  auto prompt = tape.add_bias_rows(tape.matmul(c2, bp.at("adapter.proj.w")), bp.at("adapter.proj.b"));
  return {prompt, Segments::from_lengths(out)};
}

template <typename T>
Packed<T> backend_forward(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                          const Packed<T>& prompt, const std::vector<std::vector<int32_t>>& tokens) {
  if (static_cast<int64_t>(tokens.size()) != prompt.seg.count())
    throw DimensionError("backend_forward: batch size mismatch");
  std::vector<int32_t> ids;
  std::vector<int64_t> tok_lens;
  for (const auto& seq : tokens) {
    ids.push_back(Vocabulary::kSep);
    for (int32_t tok : seq) {
      if (tok < 0 || tok >= cfg.vocab_total)
        throw IndexError("backend_forward: token " + std::to_string(tok) +
                         " out of range for vocab " + std::to_string(cfg.vocab_total));
      ids.push_back(tok);
    }
    tok_lens.push_back(1 + static_cast<int64_t>(seq.size()));
  }
  Segments tok_seg = Segments::from_lengths(tok_lens);
  // embeddings scaled by sqrt(d) so token content is commensurate with the
  // unit-amplitude position encodings (the tied output head uses raw rows)
  auto emb = tape.scale(tape.gather_rows(bp.at("backend.embed"), ids),
                        static_cast<T>(std::sqrt(static_cast<double>(cfg.d_llm))));
  auto x = tape.concat_rows(prompt.values, emb, prompt.seg, tok_seg);
  std::vector<int64_t> lens;
  for (int64_t i = 0; i < prompt.seg.count(); ++i)
    lens.push_back(prompt.seg.len[static_cast<size_t>(i)] + tok_lens[static_cast<size_t>(i)]);
  Segments seg = Segments::from_lengths(lens);
  return {decoder_stack(tape, bp, cfg, x, seg), seg};
}

template <typename T>
Packed<T> backend_lm_forward(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                             const std::vector<std::vector<int32_t>>& inputs) {
  std::vector<int32_t> ids;
  std::vector<int64_t> lens;
  for (const auto& seq : inputs) {
    if (seq.empty()) throw DataError("backend_lm_forward: empty sequence");
    for (int32_t tok : seq) {
      if (tok < 0 || tok >= cfg.vocab_total)
        throw IndexError("backend_lm_forward: token " + std::to_string(tok) + " out of range");
      ids.push_back(tok);
    }
    lens.push_back(static_cast<int64_t>(seq.size()));
  }
  Segments seg = Segments::from_lengths(lens);
  auto emb = tape.scale(tape.gather_rows(bp.at("backend.embed"), ids),
                        static_cast<T>(std::sqrt(static_cast<double>(cfg.d_llm))));
  return {decoder_stack(tape, bp, cfg, emb, seg), seg};
}

template <typename T>
typename Tape<T>::Ref lst_loss(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                               const std::vector<BatchItem<T>>& batch) {
  if (batch.empty()) throw UsageError("lst_loss: empty batch");
  std::vector<int64_t> frame_lens;
  int64_t total = 0;
  for (const auto& item : batch) {
    if (item.labels.empty()) throw DataError("lst_loss: empty label sequence");
    frame_lens.push_back(item.frames.rows());
    total += item.frames.rows();
  }
  Tensor<T> frames({total, cfg.d_frames});
  int64_t row = 0;
  for (const auto& item : batch) {
    std::copy(item.frames.data(), item.frames.data() + item.frames.numel(),
              frames.data() + row * cfg.d_frames);
    row += item.frames.rows();
  }
  Segments seg = Segments::from_lengths(frame_lens);
  auto rep = frontend_encode(tape, bp, cfg, frames, seg);
  auto prompt = adapt(tape, bp, cfg, rep);
  std::vector<std::vector<int32_t>> tokens;
  for (const auto& item : batch) tokens.push_back(item.labels);
  auto logits = backend_forward(tape, bp, cfg, prompt, tokens);

  // Loss on positions predicting the labels and the final EOS; none on the
  // prompt or SEP positions themselves.
  const int64_t rows = logits.seg.total();
  std::vector<int32_t> targets(static_cast<size_t>(rows), 0);
  std::vector<uint8_t> mask(static_cast<size_t>(rows), 0);
  for (int64_t i = 0; i < logits.seg.count(); ++i) {
    const int64_t base = logits.seg.off[static_cast<size_t>(i)];
    const int64_t plen = prompt.seg.len[static_cast<size_t>(i)];
    const auto& labels = batch[static_cast<size_t>(i)].labels;
    const int64_t l = static_cast<int64_t>(labels.size());
    for (int64_t j = 0; j <= l; ++j) {
      const int64_t pos = base + plen + j;  // SEP position is base+plen
      targets[static_cast<size_t>(pos)] =
          (j < l) ? labels[static_cast<size_t>(j)] : Vocabulary::kEos;
      mask[static_cast<size_t>(pos)] = 1;
    }
  }
  return tape.cross_entropy(logits.values, targets, mask);
}

template <typename T>
typename Tape<T>::Ref lm_loss(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                              const std::vector<std::vector<int32_t>>& sequences,
                              const std::vector<int64_t>& mask_from) {
  if (sequences.empty()) throw UsageError("lm_loss: empty batch");
  if (sequences.size() != mask_from.size()) throw DimensionError("lm_loss: mask_from size");
  std::vector<std::vector<int32_t>> inputs;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) throw DataError("lm_loss: sequence needs at least two tokens");
    inputs.emplace_back(seq.begin(), seq.end() - 1);
  }
  auto logits = backend_lm_forward(tape, bp, cfg, inputs);
  const int64_t rows = logits.seg.total();
  std::vector<int32_t> targets(static_cast<size_t>(rows), 0);
  std::vector<uint8_t> mask(static_cast<size_t>(rows), 0);
  for (int64_t i = 0; i < logits.seg.count(); ++i) {
    const int64_t base = logits.seg.off[static_cast<size_t>(i)];
    const auto& seq = sequences[static_cast<size_t>(i)];
    const int64_t n = logits.seg.len[static_cast<size_t>(i)];
    for (int64_t j = 0; j < n; ++j) {
      targets[static_cast<size_t>(base + j)] = seq[static_cast<size_t>(j + 1)];
      if (j >= mask_from[static_cast<size_t>(i)]) mask[static_cast<size_t>(base + j)] = 1;
    }
  }
  return tape.cross_entropy(logits.values, targets, mask);
}

template <typename T>
typename Tape<T>::Ref frontend_ctc_loss(Tape<T>& tape, const BoundParams<T>& bp,
                                        const ModelConfig& cfg, const Tensor<T>& frames,
                                        const Segments& seg,
                                        const std::vector<std::vector<int32_t>>& targets) {
  auto rep = frontend_encode(tape, bp, cfg, frames, seg);
  auto logits = tape.add_bias_rows(tape.matmul(rep.values, bp.at("frontend.aux_ctc.w")),
                                   bp.at("frontend.aux_ctc.b"));
  auto lp = tape.log_softmax(logits);
  return tape.ctc_packed(lp, seg, targets, /*per_frame=*/true);
}

template <typename T>
typename Tape<T>::Ref frontend_ssl_loss(Tape<T>& tape, const BoundParams<T>& bp,
                                        const ModelConfig& cfg, const Tensor<T>& frames,
                                        const Segments& seg, const std::vector<uint8_t>& mask) {
  const int64_t rows = frames.rows();
  if (static_cast<int64_t>(mask.size()) != rows)
    throw DimensionError("frontend_ssl_loss: mask length vs frames");
  int64_t masked = 0;
  for (uint8_t m : mask) masked += (m != 0);
  if (masked == 0) throw UsageError("frontend_ssl_loss: empty mask");

  // Masked rows replaced by the learned mask vector before encoding.
  Tensor<T> kept = frames;
  Tensor<T> indicator({rows, cfg.d_frames});
  for (int64_t i = 0; i < rows; ++i) {
    if (mask[static_cast<size_t>(i)]) {
      for (int64_t j = 0; j < cfg.d_frames; ++j) {
        kept.at(i, j) = T(0);
        indicator.at(i, j) = T(1);
      }
    }
  }
  auto mask_rows = tape.gather_rows(bp.at("frontend.aux_mask"),
                                    std::vector<int32_t>(static_cast<size_t>(rows), 0));
  auto input = tape.add(tape.constant(std::move(kept)),
                        tape.mul(mask_rows, tape.constant(std::move(indicator))));

  auto h = tape.add_bias_rows(tape.matmul(input, bp.at("frontend.embed.w")),
                              bp.at("frontend.embed.b"));
  h = tape.add_posenc(h, seg);
  for (int64_t i = 0; i < cfg.enc_blocks; ++i) {
    h = transformer_block(tape, bp, "frontend.block" + std::to_string(i), h, seg, cfg.enc_heads,
                          false);
  }
  auto recon = tape.add_bias_rows(tape.matmul(h, bp.at("frontend.aux_recon.w")),
                                  bp.at("frontend.aux_recon.b"));
  return tape.mse_masked(recon, frames, mask);
}

#define PCST_INSTANTIATE(T)                                                                        \
  template Packed<T> frontend_encode<T>(Tape<T>&, const BoundParams<T>&, const ModelConfig&,      \
                                        const Tensor<T>&, const Segments&);                       \
  template Packed<T> adapt<T>(Tape<T>&, const BoundParams<T>&, const ModelConfig&,                \
                              const Packed<T>&);                                                  \
  template Packed<T> backend_forward<T>(Tape<T>&, const BoundParams<T>&, const ModelConfig&,      \
                                        const Packed<T>&,                                         \
                                        const std::vector<std::vector<int32_t>>&);                \
  template Packed<T> backend_lm_forward<T>(Tape<T>&, const BoundParams<T>&, const ModelConfig&,   \
                                           const std::vector<std::vector<int32_t>>&);             \
  template Tape<T>::Ref lst_loss<T>(Tape<T>&, const BoundParams<T>&, const ModelConfig&,          \
                                    const std::vector<BatchItem<T>>&);                            \
  template Tape<T>::Ref lm_loss<T>(Tape<T>&, const BoundParams<T>&, const ModelConfig&,           \
                                   const std::vector<std::vector<int32_t>>&,                      \
                                   const std::vector<int64_t>&);                                  \
  template Tape<T>::Ref frontend_ctc_loss<T>(Tape<T>&, const BoundParams<T>&, const ModelConfig&, \
                                             const Tensor<T>&, const Segments&,                   \
                                             const std::vector<std::vector<int32_t>>&);           \
  template Tape<T>::Ref frontend_ssl_loss<T>(Tape<T>&, const BoundParams<T>&, const ModelConfig&, \
                                             const Tensor<T>&, const Segments&,                   \
                                             const std::vector<uint8_t>&);

PCST_INSTANTIATE(float)
PCST_INSTANTIATE(double)

#undef PCST_INSTANTIATE

}  // namespace pcst
