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

#include "pcst/config.hpp"

#include <malloc.h>

#include <fstream>
#include <functional>
#include <sstream>

namespace pcst {

void RunConfig::derive() {
  model.d_frames = world.d_frames;
  model.vocab_total = Vocabulary::kSpecials + 2 * world.n_src;
}

RunConfig default_config() {
  RunConfig cfg;
  apply_preset(cfg, "toy");
  return cfg;
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "toy") {
    cfg.preset = "toy";
    cfg.world = WorldConfig{};  // 8000/500/500 ST, 16000 ASR, 16000 text
    cfg.model = ModelConfig{};
    cfg.stage1 = StageConfig{};
    cfg.stage1.stage = 1;
    cfg.stage1.data_kind = LossMode::st;
    cfg.stage1.epochs = 6;
    cfg.stage1.peak_lr = 1e-3;
    cfg.stage1.batch_size = 64;
    cfg.stage1.eval_interval = 50;
    cfg.stage1.save_interval = 200;
    cfg.stage2 = StageConfig{};
    cfg.stage2.stage = 2;
    cfg.stage2.data_kind = LossMode::st;
    cfg.stage2.epochs = 1;
    cfg.stage2.peak_lr = 1e-4;
    cfg.stage2.batch_size = 64;
    cfg.stage2.eval_interval = 10;
    cfg.stage2.save_interval = 50;
    cfg.pre_frontend = PretrainConfig{};
    cfg.pre_frontend.epochs = 3;
    cfg.pre_frontend.peak_lr = 1e-3;
    cfg.pre_backend = PretrainConfig{};
    cfg.pre_backend.epochs = 6;
    cfg.pre_backend.peak_lr = 1e-3;
    cfg.beam = 4;
    cfg.max_len = 64;
  } else if (name == "paper-lr") {
    // The reported schedule: 2e-3 / 2e-5 peak rates, batch 128.
    apply_preset(cfg, "toy");
    cfg.preset = "paper-lr";
    cfg.stage1.peak_lr = 2e-3;
    cfg.stage1.batch_size = 128;
    cfg.stage2.peak_lr = 2e-5;
    cfg.stage2.batch_size = 128;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  cfg.derive();
}

namespace {

int64_t to_i64(const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("expected an integer, got '" + v + "'");
  }
}

double to_f64(const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
}

std::vector<uint64_t> to_seeds(const std::string& v) {
  std::vector<uint64_t> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(static_cast<uint64_t>(to_i64(item)));
  }
  if (out.empty()) throw ConfigError("seed list is empty");
  return out;
}

void apply_stage_kv(StageConfig& st, const std::string& field, const std::string& value) {
  if (field == "epochs") st.epochs = to_i64(value);
  else if (field == "peak_lr") st.peak_lr = to_f64(value);
  else if (field == "batch_size") st.batch_size = to_i64(value);
  else if (field == "warmup_ratio") st.warmup_ratio = to_f64(value);
  else if (field == "weight_decay") st.weight_decay = to_f64(value);
  else if (field == "lr_floor") st.lr_floor = to_f64(value);
  else if (field == "eval_interval") st.eval_interval = to_i64(value);
  else if (field == "save_interval") st.save_interval = to_i64(value);
  else if (field == "dev_limit") st.dev_limit = to_i64(value);
  else throw ConfigError("unknown stage option '" + field + "'");
}

void apply_pretrain_kv(PretrainConfig& pc, const std::string& field, const std::string& value) {
  if (field == "epochs") pc.epochs = to_i64(value);
  else if (field == "peak_lr") pc.peak_lr = to_f64(value);
  else if (field == "batch_size") pc.batch_size = to_i64(value);
  else if (field == "warmup_ratio") pc.warmup_ratio = to_f64(value);
  else if (field == "weight_decay") pc.weight_decay = to_f64(value);
  else if (field == "ssl_mask_rate") pc.ssl_mask_rate = to_f64(value);
  else if (field == "eval_interval") pc.eval_interval = to_i64(value);
  else throw ConfigError("unknown pretrain option '" + field + "'");
}

}  // namespace

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") {
    apply_preset(cfg, value);
    return;
  }
  const size_t dot = key.find('.');
  const std::string head = key.substr(0, dot);
  const std::string rest = (dot == std::string::npos) ? "" : key.substr(dot + 1);
  if (head == "data") {
    if (rest == "seed") cfg.world.seed = static_cast<uint64_t>(to_i64(value));
    else if (rest == "n_src") cfg.world.n_src = static_cast<int32_t>(to_i64(value));
    else if (rest == "d_frames") cfg.world.d_frames = to_i64(value);
    else if (rest == "noise_sigma") cfg.world.noise_sigma = to_f64(value);
    else if (rest == "st_train") cfg.world.st_train = to_i64(value);
    else if (rest == "st_dev") cfg.world.st_dev = to_i64(value);
    else if (rest == "st_test") cfg.world.st_test = to_i64(value);
    else if (rest == "asr_train") cfg.world.asr_train = to_i64(value);
    else if (rest == "asr_dev") cfg.world.asr_dev = to_i64(value);
    else if (rest == "text_train") cfg.world.text_train = to_i64(value);
    else if (rest == "text_dev") cfg.world.text_dev = to_i64(value);
    else throw ConfigError("unknown data option '" + rest + "'");
  } else if (head == "model") {
    if (rest == "d_enc") cfg.model.d_enc = to_i64(value);
    else if (rest == "enc_blocks") cfg.model.enc_blocks = to_i64(value);
    else if (rest == "enc_heads") cfg.model.enc_heads = to_i64(value);
    else if (rest == "d_llm") cfg.model.d_llm = to_i64(value);
    else if (rest == "dec_blocks") cfg.model.dec_blocks = to_i64(value);
    else if (rest == "dec_heads") cfg.model.dec_heads = to_i64(value);
    else if (rest == "ffn_mult") cfg.model.ffn_mult = to_i64(value);
    else throw ConfigError("unknown model option '" + rest + "'");
  } else if (head == "stage1") {
    apply_stage_kv(cfg.stage1, rest, value);
  } else if (head == "stage2") {
    apply_stage_kv(cfg.stage2, rest, value);
  } else if (head == "pretrain") {
    const size_t dot2 = rest.find('.');
    if (dot2 == std::string::npos) throw ConfigError("unknown pretrain option '" + rest + "'");
    const std::string which = rest.substr(0, dot2);
    const std::string field = rest.substr(dot2 + 1);
    if (which == "frontend") apply_pretrain_kv(cfg.pre_frontend, field, value);
    else if (which == "backend") apply_pretrain_kv(cfg.pre_backend, field, value);
    else throw ConfigError("unknown pretrain section '" + which + "'");
  } else if (head == "decode") {
    if (rest == "beam") cfg.beam = to_i64(value);
    else if (rest == "max_len") cfg.max_len = to_i64(value);
    else throw ConfigError("unknown decode option '" + rest + "'");
  } else if (head == "ablate") {
    if (rest == "seeds") cfg.seeds = to_seeds(value);
    else if (rest == "jobs") cfg.jobs = static_cast<int>(to_i64(value));
    else throw ConfigError("unknown ablate option '" + rest + "'");
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
  cfg.derive();
}

RunConfig load_config(const std::string& path) {
  RunConfig cfg = default_config();
  if (path.empty()) return cfg;
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ": line " + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return (a == std::string::npos) ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError(path + ": line " + std::to_string(lineno) + ": empty key or value");
    try {
      apply_kv(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

void tune_runtime_allocator() {
  // Training builds and frees tens of MB of tensors per step; keep large
  // blocks on the heap instead of bouncing them through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace pcst
