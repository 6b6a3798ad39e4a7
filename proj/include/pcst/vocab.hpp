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

#ifndef PCST_VOCAB_HPP
#define PCST_VOCAB_HPP

#include <cstdint>
#include <string>

#include "pcst/error.hpp"

namespace pcst {

// Unified id space: [pad, bos, eos, sep, s0..s{Ns-1}, t0..t{Nt-1}].
// Source and target token sets are disjoint by construction.
struct Vocabulary {
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kBos = 1;
  static constexpr int32_t kEos = 2;
  static constexpr int32_t kSep = 3;
  static constexpr int32_t kSpecials = 4;

  int32_t n_src = 0;
  int32_t n_tgt = 0;

  int32_t total() const { return kSpecials + n_src + n_tgt; }

  int32_t src_id(int32_t i) const {
    if (i < 0 || i >= n_src) throw IndexError("source token " + std::to_string(i) + " out of range");
    return kSpecials + i;
  }

  int32_t tgt_id(int32_t i) const {
    if (i < 0 || i >= n_tgt) throw IndexError("target token " + std::to_string(i) + " out of range");
    return kSpecials + n_src + i;
  }

  bool is_src(int32_t id) const { return id >= kSpecials && id < kSpecials + n_src; }
  bool is_tgt(int32_t id) const { return id >= kSpecials + n_src && id < total(); }

  int32_t src_index(int32_t id) const {
    if (!is_src(id)) throw IndexError("id " + std::to_string(id) + " is not a source token");
    return id - kSpecials;
  }

  int32_t tgt_index(int32_t id) const {
    if (!is_tgt(id)) throw IndexError("id " + std::to_string(id) + " is not a target token");
    return id - kSpecials - n_src;
  }

  std::string surface(int32_t id) const {
    switch (id) {
      case kPad: return "<pad>";
      case kBos: return "<bos>";
      case kEos: return "<eos>";
      case kSep: return "<sep>";
      default: break;
    }
    if (is_src(id)) return "s" + std::to_string(src_index(id));
    if (is_tgt(id)) return "t" + std::to_string(tgt_index(id));
    throw IndexError("id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(total()));
  }
};

}  // namespace pcst

#endif  // PCST_VOCAB_HPP
