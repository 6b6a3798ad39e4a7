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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pcst/harness.hpp"
#include "pcst/sha256.hpp"

using namespace pcst;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

RunConfig micro_config() {
  RunConfig cfg = default_config();
  cfg.world.st_train = 48;
  cfg.world.st_dev = 16;
  cfg.world.st_test = 16;
  cfg.world.asr_train = 64;
  cfg.world.asr_dev = 16;
  cfg.world.text_train = 64;
  cfg.world.text_dev = 16;
  cfg.stage1.epochs = 1;
  cfg.stage1.batch_size = 16;
  cfg.stage1.eval_interval = 2;
  cfg.stage1.save_interval = 0;
  cfg.stage2.epochs = 1;
  cfg.stage2.batch_size = 16;
  cfg.stage2.eval_interval = 2;
  cfg.stage2.save_interval = 0;
  cfg.pre_frontend.epochs = 1;
  cfg.pre_frontend.batch_size = 16;
  cfg.pre_backend.epochs = 1;
  cfg.pre_backend.batch_size = 16;
  cfg.beam = 2;
  cfg.max_len = 20;
  cfg.seeds = {1};
  cfg.derive();
  return cfg;
}

}  // namespace

TEST_CASE("config presets and key parsing") {
  RunConfig cfg = default_config();
  CHECK(cfg.world.st_train == 8000);
  CHECK(cfg.world.asr_train == 16000);
  CHECK(cfg.world.text_train == 16000);
  CHECK(cfg.stage1.epochs == 6);
  CHECK(cfg.stage1.peak_lr == doctest::Approx(1e-3));
  CHECK(cfg.stage2.epochs == 1);
  CHECK(cfg.stage2.peak_lr == doctest::Approx(1e-4));
  CHECK(cfg.model.vocab_total == 40);  // 4 specials + 18 + 18

  apply_preset(cfg, "paper-lr");
  CHECK(cfg.stage1.peak_lr == doctest::Approx(2e-3));
  CHECK(cfg.stage2.peak_lr == doctest::Approx(2e-5));
  CHECK(cfg.stage1.batch_size == 128);

  apply_kv(cfg, "data.n_src", "10");
  CHECK(cfg.model.vocab_total == 24);
  apply_kv(cfg, "ablate.seeds", "4,5");
  CHECK(cfg.seeds == std::vector<uint64_t>{4, 5});
  CHECK_THROWS_AS(apply_kv(cfg, "nope.key", "1"), ConfigError);
  CHECK_THROWS_AS(apply_kv(cfg, "stage1.peak_lr", "fast"), ConfigError);

  const std::string path = "/tmp/pcst_cfg_test.conf";
  {
    std::ofstream f(path);
    f << "# comment\nstage1.peak_lr = 0.005\n\ndata.n_src = 8 # trailing comment\n";
  }
  RunConfig loaded = load_config(path);
  CHECK(loaded.stage1.peak_lr == doctest::Approx(0.005));
  CHECK(loaded.world.n_src == 8);
  {
    std::ofstream f(path);
    f << "stage1.peak_lr\n";
  }
  CHECK_THROWS_WITH_AS(load_config(path), doctest::Contains("line 1"), ConfigError);
}

TEST_CASE("gen-data refuses non-empty output without force") {
  RunConfig cfg = micro_config();
  const std::string dir = "/tmp/pcst_gen_cli";
  fs::remove_all(dir);
  const std::string manifest = cmd_gen_data(cfg, dir, false);
  CHECK(fs::exists(manifest));
  CHECK_THROWS_AS(cmd_gen_data(cfg, dir, false), ConfigError);
  CHECK_NOTHROW(cmd_gen_data(cfg, dir, true));
}

TEST_CASE("compose_init composition rules") {
  RunConfig cfg = micro_config();
  CHECK_THROWS_AS(compose_init(cfg, 2, LossMode::st, 1, {}, false), ConfigError);
  TrainSetup cold = compose_init(cfg, 2, LossMode::st, 1, {}, true);
  CHECK(cold.scfg.stage == 2);

  // tier checkpoints flow their provenance into the stage config
  Checkpoint fe;
  ParamStoreF init = init_params(cfg.model, 9);
  for (const auto& [name, e] : init) {
    if (e.group == Group::frontend) fe.params.add(name, e.group, e.value);
  }
  fe.frontend_tier = "ctc";
  save_checkpoint(fe, "/tmp/pcst_ci_fe.pcst");
  TrainSetup setup = compose_init(cfg, 1, LossMode::st, 1, {"/tmp/pcst_ci_fe.pcst"}, false);
  CHECK(setup.scfg.frontend_tier == "ctc");
  CHECK(setup.scfg.backend_tier == "none");
}

TEST_CASE("curves merge preserves dev rows exactly") {
  std::vector<MetricRow> s1 = {{0, 1, "dev", 3.5, 0.0},
                               {10, 1, "train", 2.0, 1e-3},
                               {10, 1, "dev", 2.25, 1e-3}};
  std::vector<MetricRow> s2 = {{0, 2, "dev", 2.25, 0.0},
                               {5, 2, "dev", 2.5, 1e-4},  // an early rise must survive
                               {10, 2, "dev", 1.75, 1e-4}};
  write_metrics_csv(s1, "/tmp/pcst_curve1.csv");
  write_metrics_csv(s2, "/tmp/pcst_curve2.csv");
  merge_curves({"/tmp/pcst_curve1.csv", "/tmp/pcst_curve2.csv"}, "/tmp/pcst_merged.csv");
  const std::string merged = slurp("/tmp/pcst_merged.csv");
  CHECK(merged.find("run,stage,step,dev_loss") == 0);
  CHECK(merged.find("/tmp/pcst_curve1.csv,1,0,3.5") != std::string::npos);
  CHECK(merged.find("/tmp/pcst_curve2.csv,2,5,2.5") != std::string::npos);   // the rise
  CHECK(merged.find("/tmp/pcst_curve2.csv,2,10,1.75") != std::string::npos);
  CHECK(merged.find("train") == std::string::npos);  // train rows are not dev curves

  {
    std::ofstream f("/tmp/pcst_badcurve.csv");
    f << "step,loss\n1,2\n";
  }
  CHECK_THROWS_AS(merge_curves({"/tmp/pcst_badcurve.csv"}, "/tmp/pcst_merged2.csv"), ParseError);
}

TEST_CASE("ablator runs the full strategy grid on a micro world") {
  RunConfig cfg = micro_config();
  const std::string data = "/tmp/pcst_micro_data";
  const std::string out = "/tmp/pcst_micro_out";
  fs::remove_all(data);
  fs::remove_all(out);
  gen_world(cfg.world, data);

  Ablator ablator(cfg, data, out, false);
  nlohmann::json strat = ablator.strategies();
  REQUIRE(strat.at("rows").size() == 4);
  for (const auto& row : strat.at("rows")) {
    const std::string s = row.at("strategy").get<std::string>();
    if (s == "a") {
      CHECK(!row.at("bleu_stage1").is_null());
      CHECK(row.at("bleu_stage2").is_null());
    } else if (s == "b" || s == "c") {
      CHECK(row.at("bleu_stage1").is_null());
      CHECK(!row.at("bleu_stage2").is_null());
    } else {
      CHECK(!row.at("bleu_stage1").is_null());
      CHECK(!row.at("bleu_stage2").is_null());
    }
  }
  // every cell is traceable to artifacts on disk
  for (const auto& [seed, cell] : strat.at("cells").items()) {
    for (const auto& [k, refs] : cell.items()) {
      CHECK(fs::exists(refs.at("ckpt").get<std::string>()));
      CHECK(fs::exists(refs.at("metrics").get<std::string>()));
    }
  }
  CHECK(fs::exists(strat.at("report_path").get<std::string>()));

  // a second run reuses the cells and reproduces the numbers
  Ablator again(cfg, data, out, false);
  nlohmann::json strat2 = again.strategies();
  CHECK(strat2.at("rows") == strat.at("rows"));

  nlohmann::json fe = ablator.frontend_ablation();
  REQUIRE(fe.at("rows").size() == 3);
  for (const auto& row : fe.at("rows")) {
    if (row.at("tier") == "random") CHECK(row.at("provenance") == "init-only");
    CHECK(fs::exists(row.at("frontend_ckpt").get<std::string>()));
  }

  nlohmann::json be = ablator.backend_ablation();
  REQUIRE(be.at("rows").size() == 3);
}

TEST_CASE("write_eval emits the report schema") {
  RunConfig cfg = micro_config();
  const std::string data = "/tmp/pcst_micro_data";
  if (!fs::exists(data + "/manifest.json")) gen_world(cfg.world, data);
  World world = load_manifest(data + "/manifest.json");
  auto corpus = read_corpus(data + "/st-test.jsonl");
  ParamStoreF params = init_params(cfg.model, 2);
  EvalResult result = evaluate(params, cfg.model, corpus, 2, 20);
  EvalArtifacts arts = write_eval(result, world.lang.vocab(), "/tmp/pcst_eval_out");
  nlohmann::json j = nlohmann::json::parse(slurp(arts.json_path));
  CHECK(j.contains("bleu"));
  CHECK(j.at("precisions").size() == 4);
  CHECK(j.contains("bp"));
  CHECK(j.at("buckets").size() == 5);
  int64_t total = 0;
  for (const auto& b : j.at("buckets")) total += b.at("count").get<int64_t>();
  CHECK(total == static_cast<int64_t>(corpus.size()));
  const std::string tsv = slurp(arts.tsv_path);
  CHECK(tsv.find("id\tduration\thyp\tref") == 0);
}
