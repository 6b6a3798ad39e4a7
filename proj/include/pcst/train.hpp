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

#ifndef PCST_TRAIN_HPP
#define PCST_TRAIN_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pcst/ckpt.hpp"
#include "pcst/data.hpp"
#include "pcst/model.hpp"

namespace pcst {

// ----- optimizer -------------------------------------------------------------

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // applied to tensors of rank >= 2 only
};

struct AdamState {
  std::map<std::string, std::pair<TensorF, TensorF>> moments;  // m, v per tensor
  int64_t step = 0;                                            // completed updates
};

// One decoupled-weight-decay Adam update over the trainable tensors.
// grads must contain exactly the trainable names; frozen tensors are
// untouched by construction.
void adamw_step(ParamStoreF& params, const std::map<std::string, TensorF>& grads,
                AdamState& state, double lr, const OptimConfig& oc);

// Linear warmup to peak over round(warmup_ratio * total) steps, then cosine
// decay to zero at total.
double lr_at(int64_t step, int64_t total_steps, double peak, double warmup_ratio = 0.03,
             double floor = 0.0);

// ----- stage training ----------------------------------------------------------

struct StageConfig {
  int stage = 1;  // 1 freezes {frontend, backend}; 2 freezes {frontend}
  LossMode data_kind = LossMode::st;
  int64_t epochs = 6;
  double peak_lr = 1e-3;
  int64_t batch_size = 64;
  double warmup_ratio = 0.03;
  double weight_decay = 0.01;
  double lr_floor = 0.0;  // optional post-warmup floor, off by default
  int64_t eval_interval = 50;
  int64_t save_interval = 200;
  int64_t max_steps = 0;   // 0: epochs decide; otherwise hard stop
  int64_t dev_limit = 0;   // 0: evaluate the whole dev split
  uint64_t seed = 1;
  std::string frontend_tier = "none";  // provenance echoed into checkpoints
  std::string backend_tier = "none";
};

struct MetricRow {
  int64_t step;
  int stage;
  std::string split;
  double loss;
  double lr;
};

struct TrainResult {
  std::string final_ckpt;
  std::string metrics_csv;
  std::vector<MetricRow> metrics;
};

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path);
std::vector<MetricRow> read_metrics_csv(const std::string& path);

// Minimizes the cascade loss over the given corpus with the stage's freeze
// mask; logs train/dev loss, saves periodic and final checkpoints into
// outdir, returns the final checkpoint path. Aborts with NumericError
// naming the last saved checkpoint if the loss goes non-finite.
TrainResult train_stage(ParamStoreF& params, const ModelConfig& mcfg, const StageConfig& cfg,
                        const std::vector<Triple>& train, const std::vector<Triple>& dev,
                        const std::string& outdir);

// Teacher-forced mean loss per loss position over a corpus.
double eval_loss(const ParamStoreF& params, const ModelConfig& mcfg, LossMode mode,
                 const std::vector<Triple>& corpus, int64_t batch_size, int64_t limit = 0);

// ----- pretraining tiers --------------------------------------------------------

struct PretrainConfig {
  int64_t epochs = 4;
  double peak_lr = 1e-3;
  int64_t batch_size = 64;
  double warmup_ratio = 0.03;
  double weight_decay = 0.01;
  double ssl_mask_rate = 0.3;
  int64_t eval_interval = 100;
  uint64_t seed = 1;
};

struct PretrainResult {
  std::string ckpt;
  double dev_metric = 0.0;  // ctc: nats/frame; ssl: mse; mt/lm: target-side ppl
  std::vector<MetricRow> metrics;
};

// tier in {ctc, ssl, random}; saves a frontend-only checkpoint (auxiliary
// heads dropped) with the tier recorded.
PretrainResult pretrain_frontend(const std::string& tier, const ModelConfig& mcfg,
                                 const PretrainConfig& cfg, const std::vector<Triple>& train,
                                 const std::vector<Triple>& dev, const std::string& out_path);

// tier in {mt, lm, random}; saves a backend-only checkpoint.
PretrainResult pretrain_backend(const std::string& tier, const ModelConfig& mcfg,
                                const PretrainConfig& cfg, const std::vector<Triple>& train,
                                const std::vector<Triple>& dev, const std::string& out_path);

// Gradients of the current loss for every trainable tensor (helper shared
// with the verification harness).
std::map<std::string, TensorF> lst_gradients(const ParamStoreF& params, const ModelConfig& mcfg,
                                             LossMode mode, const std::vector<Triple>& batch,
                                             double* loss_out);

std::vector<BatchItem<float>> to_batch(const std::vector<Triple>& triples, LossMode mode);

std::string format_float(double v);

}  // namespace pcst

#endif  // PCST_TRAIN_HPP
