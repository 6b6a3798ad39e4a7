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

#ifndef PCST_HARNESS_HPP
#define PCST_HARNESS_HPP

#include <json.hpp>

#include "pcst/bleu.hpp"
#include "pcst/config.hpp"

namespace pcst {

// Generates all corpora into out_dir; refuses a non-empty directory unless
// force is set. Returns the manifest path.
std::string cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, bool force);

// Model init composition for the train command: fresh seeded parameters,
// then any number of (partial) checkpoints applied in order.
struct TrainSetup {
  ParamStoreF params;
  StageConfig scfg;
};
TrainSetup compose_init(const RunConfig& cfg, int stage, LossMode data, uint64_t seed,
                        const std::vector<std::string>& init_ckpts, bool allow_cold_start);

// Evaluation artifacts: the JSON report plus a per-sentence TSV.
struct EvalArtifacts {
  std::string json_path;
  std::string tsv_path;
  BleuReport report;
};
EvalArtifacts write_eval(const EvalResult& result, const Vocabulary& vocab,
                         const std::string& out_prefix);

// Merges metrics CSVs into one tidy (run, stage, step, dev_loss) table,
// preserving every dev point unmodified.
void merge_curves(const std::vector<std::string>& inputs, const std::string& out_path);

// Orchestrates the strategy / frontend / backend studies over the configured
// seeds. Cells are cached on disk under out_dir/cells and reused across
// tables; force wipes the cache first. Pipelines run concurrently, each on a
// single thread, so reports are independent of the job count.
class Ablator {
 public:
  Ablator(RunConfig cfg, std::string data_dir, std::string out_dir, bool force);

  nlohmann::json strategies();         // training-strategy study (a..d)
  nlohmann::json frontend_ablation();  // ctc / ssl / random frontend
  nlohmann::json backend_ablation();   // mt / lm / random backend

  const RunConfig& config() const { return cfg_; }

 private:
  struct CellRefs {
    std::string dir;
    std::string ckpt;
    std::string metrics;
    std::string eval_json;
    double bleu = 0.0;
  };

  void load_corpora();
  std::string ensure_pretrained(const std::string& kind, const std::string& tier);
  CellRefs run_stage1(const std::string& fe, const std::string& be, LossMode data, uint64_t seed);
  CellRefs run_stage2(const std::string& fe, const std::string& be, uint64_t seed, bool cold,
                      const std::string& parent_ckpt, const std::string& parent_id);
  double eval_checkpoint(const std::string& ckpt, const std::string& out_prefix);
  void run_units(std::vector<std::function<void()>> units);
  std::string cell_dir(const std::string& id) const;

  RunConfig cfg_;
  std::string data_dir_;
  std::string out_dir_;
  World world_;
  std::vector<Triple> st_train_, st_dev_, st_test_;
  std::vector<Triple> asr_train_, asr_dev_;
  std::vector<Triple> text_train_, text_dev_;
};

}  // namespace pcst

#endif  // PCST_HARNESS_HPP
