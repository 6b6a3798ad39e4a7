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

#ifndef PCST_CKPT_HPP
#define PCST_CKPT_HPP

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pcst/model.hpp"

namespace pcst {

// Binary checkpoint: "PCST" magic, u32 version, u64 length-prefixed JSON
// header, then raw little-endian f32 payloads. Save -> load -> save is
// byte-identical.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  ParamStoreF params;
  std::map<std::string, std::pair<TensorF, TensorF>> moments;  // adam m/v, optional
  std::string rng_state;
  int64_t step = 0;
  std::map<std::string, std::string> config_echo;
  std::string frontend_tier = "none";
  std::string backend_tier = "none";
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into target. strict requires the exact same
// tensor set; partial mode updates only the names present in the file
// (which must all exist in the target with matching shapes).
void apply_checkpoint(const Checkpoint& ckpt, ParamStoreF& target, bool strict);

// Elementwise mean over >=2 checkpoints with identical tensor sets;
// moments and RNG state are dropped, step is the max.
Checkpoint average_checkpoints(const std::vector<std::string>& paths);

}  // namespace pcst

#endif  // PCST_CKPT_HPP
