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

#ifndef PCST_MODEL_HPP
#define PCST_MODEL_HPP

#include <map>
#include <set>
#include <string>
#include <vector>

#include "pcst/tape.hpp"
#include "pcst/tensor.hpp"
#include "pcst/vocab.hpp"

namespace pcst {

enum class Group { frontend, adapter, backend };

std::string group_name(Group g);
Group group_from_name(const std::string& s);

// Cascade dimensions. The two length-adapter convolutions are fixed at
// kernel 5 / stride 2 / padding 2, so each halves the length (ceil).
struct ModelConfig {
  int64_t d_frames = 16;
  int64_t d_enc = 64;
  int64_t enc_blocks = 2;
  int64_t enc_heads = 4;
  int64_t d_llm = 128;
  int64_t dec_blocks = 4;
  int64_t dec_heads = 4;
  int64_t ffn_mult = 4;
  int32_t vocab_total = 40;

  static constexpr int64_t kConvKernel = 5;
  static constexpr int64_t kConvStride = 2;
  static constexpr int64_t kConvPad = 2;
};

// Output length of one (5,2,2) convolution: ceil(len / 2).
inline int64_t conv_out_len(int64_t len) {
  return (len + 2 * ModelConfig::kConvPad - ModelConfig::kConvKernel) / ModelConfig::kConvStride + 1;
}

// Soft-prompt length after the two-conv length adapter.
inline int64_t prompt_len(int64_t frames) { return conv_out_len(conv_out_len(frames)); }

// Named tensors partitioned into {frontend, adapter, backend} with a freeze
// mask per group. Iteration order is the (stable) name order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    Group group;
  };

  void add(const std::string& name, Group g, Tensor<T> v) {
    if (params_.count(name)) throw IntegrityError("duplicate parameter " + name);
    params_.emplace(name, Entry{std::move(v), g});
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw IntegrityError("unknown parameter " + name);
    return it->second.value;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw IntegrityError("unknown parameter " + name);
    return it->second.value;
  }

  Group group_of(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw IntegrityError("unknown parameter " + name);
    return it->second.group;
  }

  void erase(const std::string& name) { params_.erase(name); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
  }

  size_t size() const { return params_.size(); }

  void freeze(Group g) { frozen_.insert(g); }
  void unfreeze(Group g) { frozen_.erase(g); }
  void clear_freeze() { frozen_.clear(); }
  bool group_frozen(Group g) const { return frozen_.count(g) != 0; }
  bool frozen(const std::string& name) const { return group_frozen(group_of(name)); }
  const std::set<Group>& frozen_groups() const { return frozen_; }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : params_) {
      if (!frozen_.count(v.group)) out.push_back(k);
    }
    return out;
  }

  int64_t numel(Group g) const {
    int64_t n = 0;
    for (const auto& [k, v] : params_)
      if (v.group == g) n += v.value.numel();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, v] : params_) out.add(k, v.group, v.value.template cast<U>());
    for (Group g : frozen_) out.freeze(g);
    return out;
  }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Entry> params_;
  std::set<Group> frozen_;
};

using ParamStoreF = ParamStore<float>;
using ParamStoreD = ParamStore<double>;

// A partition of parameter names by group; throws if any tensor is missing
// a group or groups overlap (impossible by construction, checked anyway).
std::map<Group, std::vector<std::string>> parameter_groups(const ParamStoreF& store);

// Seeded initialization of the full cascade.
ParamStoreF init_params(const ModelConfig& cfg, uint64_t seed);
// Auxiliary pretraining heads (dropped from saved checkpoints).
void add_ctc_head(ParamStoreF& store, const ModelConfig& cfg, int64_t ctc_classes, uint64_t seed);
void add_ssl_head(ParamStoreF& store, const ModelConfig& cfg, uint64_t seed);
bool is_aux_param(const std::string& name);

// ----- tape-bound forward -------------------------------------------------

// Parameters staged onto a tape; frozen groups enter as constants so no
// gradient work happens for them at all.
template <typename T>
class BoundParams {
 public:
  BoundParams(Tape<T>& tape, const ParamStore<T>& store) {
    for (const auto& [name, e] : store) {
      const bool trainable = !store.group_frozen(e.group);
      refs_[name] = trainable ? tape.input(e.value, true) : tape.constant(e.value);
    }
  }

  typename Tape<T>::Ref at(const std::string& name) const {
    auto it = refs_.find(name);
    if (it == refs_.end()) throw IntegrityError("unbound parameter " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return refs_.count(name) != 0; }

  const std::map<std::string, typename Tape<T>::Ref>& refs() const { return refs_; }

 private:
  std::map<std::string, typename Tape<T>::Ref> refs_;
};

template <typename T>
struct Packed {
  typename Tape<T>::Ref values;
  Segments seg;
};

// Frame embedding + positions + full-attention blocks; length-preserving.
template <typename T>
Packed<T> frontend_encode(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                          const Tensor<T>& frames, const Segments& seg);

// conv(5,2,2) -> gelu -> conv(5,2,2) -> linear into the backend width.
template <typename T>
Packed<T> adapt(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                const Packed<T>& rep);

// [prompt][SEP emb][token embs] -> causal blocks -> tied-head logits.
template <typename T>
Packed<T> backend_forward(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                          const Packed<T>& prompt, const std::vector<std::vector<int32_t>>& tokens);

// Causal LM over raw id sequences (backend pretraining); returns logits.
template <typename T>
Packed<T> backend_lm_forward(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                             const std::vector<std::vector<int32_t>>& inputs);

enum class LossMode { asr, st };

template <typename T>
struct BatchItem {
  Tensor<T> frames;               // [T x d_frames]
  std::vector<int32_t> labels;    // unified vocab ids (no EOS)
};

// Mean over loss positions (labels + EOS) of -log p(label | prefix).
template <typename T>
typename Tape<T>::Ref lst_loss(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                               const std::vector<BatchItem<T>>& batch);

// Causal-LM cross entropy over full sequences; loss counted from
// target index mask_from[i] onward (0 = every predictable position).
template <typename T>
typename Tape<T>::Ref lm_loss(Tape<T>& tape, const BoundParams<T>& bp, const ModelConfig& cfg,
                              const std::vector<std::vector<int32_t>>& sequences,
                              const std::vector<int64_t>& mask_from);

// CTC over frontend outputs through the auxiliary projection head.
template <typename T>
typename Tape<T>::Ref frontend_ctc_loss(Tape<T>& tape, const BoundParams<T>& bp,
                                        const ModelConfig& cfg, const Tensor<T>& frames,
                                        const Segments& seg,
                                        const std::vector<std::vector<int32_t>>& targets);

// Masked-frame reconstruction through the auxiliary linear head.
template <typename T>
typename Tape<T>::Ref frontend_ssl_loss(Tape<T>& tape, const BoundParams<T>& bp,
                                        const ModelConfig& cfg, const Tensor<T>& frames,
                                        const Segments& seg, const std::vector<uint8_t>& mask);

}  // namespace pcst

#endif  // PCST_MODEL_HPP
