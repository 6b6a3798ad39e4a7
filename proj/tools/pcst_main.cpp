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

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pcst/decode.hpp"
#include "pcst/harness.hpp"

namespace fs = std::filesystem;
using namespace pcst;

namespace {

struct GlobalArgs {
  std::string config;
  int64_t seed = -1;  // -1: keep config/preset value
  std::string out;
  bool force = false;
};

RunConfig make_config(const GlobalArgs& g) {
  RunConfig cfg = load_config(g.config);
  if (g.seed >= 0) {
    cfg.world.seed = static_cast<uint64_t>(g.seed);
    cfg.stage1.seed = static_cast<uint64_t>(g.seed);
    cfg.stage2.seed = static_cast<uint64_t>(g.seed);
    cfg.pre_frontend.seed = static_cast<uint64_t>(g.seed);
    cfg.pre_backend.seed = static_cast<uint64_t>(g.seed);
  }
  return cfg;
}

std::vector<Triple> load_split(const std::string& data_dir, const std::string& kind,
                               const std::string& split) {
  return read_corpus(corpus_path(data_dir, kind, split));
}

void print_strategy_summary(const nlohmann::json& report) {
  for (const auto& row : report.at("rows")) {
    const auto fmt = [&](const char* key) -> std::string {
      if (row.at(key).is_null()) return "-";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", row.at(key).at("mean").get<double>());
      return buf;
    };
    std::printf("strategy=%s bleu_stage1=%s bleu_stage2=%s\n",
                row.at("strategy").get<std::string>().c_str(), fmt("bleu_stage1").c_str(),
                fmt("bleu_stage2").c_str());
  }
  std::printf("report=%s\n", report.at("report_path").get<std::string>().c_str());
}

void print_tier_summary(const nlohmann::json& report) {
  for (const auto& row : report.at("rows")) {
    std::printf("tier=%s bleu_stage1=%.2f bleu_stage2=%.2f\n",
                row.at("tier").get<std::string>().c_str(),
                row.at("bleu_stage1").at("mean").get<double>(),
                row.at("bleu_stage2").at("mean").get<double>());
  }
  std::printf("report=%s\n", report.at("report_path").get<std::string>().c_str());
}

int run(int argc, char** argv) {
  CLI::App app{"pcst: prompted-cascade speech translation at desk scale"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config, "flat key = value config file");
  app.add_option("--seed", g.seed, "seed override");
  app.add_option("--out", g.out, "output directory or file");
  app.add_flag("--force", g.force, "overwrite existing outputs");

  // ---- gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpora");

  // ---- pretrain-frontend / pretrain-backend
  std::string tier, data_dir;
  auto* pf = app.add_subcommand("pretrain-frontend", "pretrain the speech encoder");
  pf->add_option("--tier", tier, "ctc | ssl | random")->required();
  pf->add_option("--data", data_dir, "corpus directory")->required();
  auto* pb = app.add_subcommand("pretrain-backend", "pretrain the language backend");
  pb->add_option("--tier", tier, "mt | lm | random")->required();
  pb->add_option("--data", data_dir, "corpus directory")->required();

  // ---- train
  int stage = 1;
  std::string data_kind = "st";
  std::vector<std::string> init_ckpts;
  bool allow_cold = false;
  auto* tr = app.add_subcommand("train", "run one training stage");
  tr->add_option("--stage", stage, "1 | 2")->required();
  tr->add_option("--data", data_dir, "corpus directory")->required();
  tr->add_option("--data-kind", data_kind, "asr | st (default st)");
  tr->add_option("--init", init_ckpts, "checkpoint(s) applied to the fresh model in order");
  tr->add_flag("--allow-cold-start", allow_cold, "permit stage 2 without --init");

  // ---- eval / decode
  std::string ckpt_path, corpus_file;
  int64_t beam_override = -1;
  bool oracle = false, check_beam = false;
  auto* ev = app.add_subcommand("eval", "decode a corpus and report BLEU");
  ev->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  ev->add_option("--corpus", corpus_file, "corpus JSONL file")->required();
  ev->add_option("--data", data_dir, "corpus directory (for the manifest)")->required();
  ev->add_option("--beam", beam_override, "beam size (default from config)");
  ev->add_flag("--oracle", oracle, "test hook: echo references as hypotheses");
  ev->add_flag("--check-beam", check_beam,
               "also greedy-decode and verify beam never scores below it");

  auto* de = app.add_subcommand("decode", "decode a corpus to TSV");
  de->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  de->add_option("--corpus", corpus_file, "corpus JSONL file")->required();
  de->add_option("--data", data_dir, "corpus directory (for the manifest)")->required();
  de->add_option("--beam", beam_override, "beam size (default from config)");

  // ---- avg-ckpt
  std::vector<std::string> avg_inputs;
  auto* avg = app.add_subcommand("avg-ckpt", "average checkpoints elementwise");
  avg->add_option("inputs", avg_inputs, "checkpoints to average")->required();

  // ---- ablations
  auto* as = app.add_subcommand("ablate-strategies", "training-strategy study");
  as->add_option("--data", data_dir, "corpus directory")->required();
  auto* af = app.add_subcommand("ablate-frontend", "speech-frontend study");
  af->add_option("--data", data_dir, "corpus directory")->required();
  auto* ab = app.add_subcommand("ablate-backend", "backend study");
  ab->add_option("--data", data_dir, "corpus directory")->required();
  std::string seeds_csv;
  int jobs = 0;
  for (auto* cmd : {as, af, ab}) {
    cmd->add_option("--seeds", seeds_csv, "comma-separated seed list");
    cmd->add_option("--jobs", jobs, "concurrent pipelines (default: hardware)");
  }

  // ---- curves
  std::vector<std::string> curve_inputs;
  auto* cu = app.add_subcommand("curves", "merge metrics CSVs into a tidy table");
  cu->add_option("inputs", curve_inputs, "metrics.csv files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  tune_runtime_allocator();
  RunConfig cfg = make_config(g);
  if (!seeds_csv.empty()) apply_kv(cfg, "ablate.seeds", seeds_csv);
  if (jobs > 0) cfg.jobs = jobs;

  if (gen->parsed()) {
    if (g.out.empty()) throw ConfigError("gen-data needs --out");
    const std::string manifest = cmd_gen_data(cfg, g.out, g.force);
    std::printf("manifest=%s\n", manifest.c_str());
    return 0;
  }

  if (pf->parsed() || pb->parsed()) {
    if (g.out.empty()) throw ConfigError("pretraining needs --out <file>");
    fs::create_directories(fs::path(g.out).parent_path().empty()
                               ? "."
                               : fs::path(g.out).parent_path().string());
    PretrainResult result;
    if (pf->parsed()) {
      result = pretrain_frontend(tier, cfg.model, cfg.pre_frontend,
                                 load_split(data_dir, "asr", "train"),
                                 load_split(data_dir, "asr", "dev"), g.out);
    } else {
      result = pretrain_backend(tier, cfg.model, cfg.pre_backend,
                                load_split(data_dir, "text", "train"),
                                load_split(data_dir, "text", "dev"), g.out);
    }
    std::printf("ckpt=%s dev_metric=%s\n", result.ckpt.c_str(),
                format_float(result.dev_metric).c_str());
    return 0;
  }

  if (tr->parsed()) {
    if (g.out.empty()) throw ConfigError("train needs --out <dir>");
    if (data_kind != "asr" && data_kind != "st")
      throw ConfigError("--data-kind must be asr or st");
    const LossMode mode = (data_kind == "asr") ? LossMode::asr : LossMode::st;
    TrainSetup setup = compose_init(cfg, stage, mode,
                                    (g.seed >= 0) ? static_cast<uint64_t>(g.seed)
                                                  : (stage == 1 ? cfg.stage1.seed : cfg.stage2.seed),
                                    init_ckpts, allow_cold);
    const auto& train_split = load_split(data_dir, data_kind, "train");
    const auto& dev_split = load_split(data_dir, data_kind, "dev");
    TrainResult result = train_stage(setup.params, cfg.model, setup.scfg, train_split, dev_split,
                                     g.out);
    std::printf("ckpt=%s metrics=%s\n", result.final_ckpt.c_str(), result.metrics_csv.c_str());
    return 0;
  }

  if (ev->parsed() || de->parsed()) {
    const World world = load_manifest(data_dir + "/manifest.json");
    const auto corpus = read_corpus(corpus_file);
    const int64_t beam = (beam_override > 0) ? beam_override : cfg.beam;
    ParamStoreF params = init_params(cfg.model, 0);
    apply_checkpoint(load_checkpoint(ckpt_path), params, /*strict=*/false);
    if (de->parsed()) {
      EvalResult result = evaluate(params, cfg.model, corpus, beam, cfg.max_len);
      const std::string out = g.out.empty() ? "decoded.tsv" : g.out;
      std::ofstream f(out, std::ios::binary);
      const Vocabulary vocab = world.lang.vocab();
      for (const auto& s : result.sentences) {
        f << s.id << "\t";
        for (size_t i = 0; i < s.hyp.size(); ++i)
          f << (i ? " " : "") << vocab.surface(s.hyp[i]);
        f << "\n";
      }
      std::printf("decoded=%zu out=%s\n", result.sentences.size(), out.c_str());
      return 0;
    }
    EvalResult result = evaluate(params, cfg.model, corpus, beam, cfg.max_len);
    if (oracle) {
      for (auto& s : result.sentences) s.hyp = s.ref;
      NgramStats pooled;
      for (const auto& s : result.sentences) pooled += ngram_stats(s.hyp, s.ref);
      const auto buckets = result.report.buckets;
      result.report = bleu_from_stats(pooled);
      result.report.buckets = buckets;
      for (auto& b : result.report.buckets) b.bleu = 100.0;
    }
    if (check_beam && beam > 1) {
      EvalResult greedy = evaluate(params, cfg.model, corpus, 1, cfg.max_len);
      for (size_t i = 0; i < corpus.size(); ++i) {
        if (result.sentences[i].logprob < greedy.sentences[i].logprob - 1e-9) {
          throw IntegrityError("beam hypothesis scored below greedy on " + corpus[i].id);
        }
      }
    }
    const std::string prefix =
        (g.out.empty() ? fs::path(corpus_file).stem().string() : g.out + "/eval");
    if (!g.out.empty()) fs::create_directories(g.out);
    write_eval(result, world.lang.vocab(), prefix);
    std::printf("BLEU=%.2f\n", result.report.bleu);
    return 0;
  }

  if (avg->parsed()) {
    if (g.out.empty()) throw ConfigError("avg-ckpt needs --out <file>");
    Checkpoint averaged = average_checkpoints(avg_inputs);
    save_checkpoint(averaged, g.out);
    std::printf("ckpt=%s step=%lld\n", g.out.c_str(), static_cast<long long>(averaged.step));
    return 0;
  }

  if (as->parsed() || af->parsed() || ab->parsed()) {
    if (g.out.empty()) throw ConfigError("ablations need --out <dir>");
    Ablator ablator(cfg, data_dir, g.out, g.force);
    if (as->parsed()) {
      print_strategy_summary(ablator.strategies());
    } else if (af->parsed()) {
      print_tier_summary(ablator.frontend_ablation());
    } else {
      print_tier_summary(ablator.backend_ablation());
    }
    return 0;
  }

  if (cu->parsed()) {
    if (g.out.empty()) throw ConfigError("curves needs --out <file>");
    merge_curves(curve_inputs, g.out);
    std::printf("curves=%s\n", g.out.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
