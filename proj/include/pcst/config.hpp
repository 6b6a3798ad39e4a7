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

#ifndef PCST_CONFIG_HPP
#define PCST_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcst/data.hpp"
#include "pcst/train.hpp"

namespace pcst {

// Full run configuration. Loaded from flat "key = value" files with '#'
// comments; unknown keys are an error. See README for the key list.
struct RunConfig {
  std::string preset = "toy";
  WorldConfig world;
  ModelConfig model;
  StageConfig stage1;
  StageConfig stage2;
  PretrainConfig pre_frontend;
  PretrainConfig pre_backend;
  int64_t beam = 4;
  int64_t max_len = 64;
  std::vector<uint64_t> seeds = {1, 2, 3};
  int jobs = 0;  // concurrent ablation pipelines; 0 = hardware count

  void derive();  // fills model.vocab_total etc. from the world settings
};

RunConfig default_config();

// Applies preset defaults ("toy" or "paper-lr").
void apply_preset(RunConfig& cfg, const std::string& name);

// One "key = value" assignment; throws ConfigError on unknown keys.
void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses a config file on top of the defaults.
RunConfig load_config(const std::string& path);

// setenv-style malloc tuning for the long-running entry points.
void tune_runtime_allocator();

}  // namespace pcst

#endif  // PCST_CONFIG_HPP
