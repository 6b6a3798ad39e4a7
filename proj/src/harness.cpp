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

#include "pcst/harness.hpp"

#include <omp.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "pcst/decode.hpp"

namespace pcst {

namespace fs = std::filesystem;
using nlohmann::json;

std::string cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, bool force) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!force)
      throw ConfigError("output directory " + out_dir + " is not empty (use --force)");
    fs::remove_all(out_dir);
  }
  gen_world(cfg.world, out_dir);
  return out_dir + "/manifest.json";
}

TrainSetup compose_init(const RunConfig& cfg, int stage, LossMode data, uint64_t seed,
                        const std::vector<std::string>& init_ckpts, bool allow_cold_start) {
  if (stage == 2 && init_ckpts.empty() && !allow_cold_start) {
    throw ConfigError("stage 2 requires --init (or --allow-cold-start for a cold run)");
  }
  TrainSetup setup;
  setup.params = init_params(cfg.model, seed);
  setup.scfg = (stage == 1) ? cfg.stage1 : cfg.stage2;
  setup.scfg.stage = stage;
  setup.scfg.data_kind = data;
  setup.scfg.seed = seed;
  for (const auto& path : init_ckpts) {
    const Checkpoint ckpt = load_checkpoint(path);
    apply_checkpoint(ckpt, setup.params, /*strict=*/false);
    if (ckpt.frontend_tier != "none") setup.scfg.frontend_tier = ckpt.frontend_tier;
    if (ckpt.backend_tier != "none") setup.scfg.backend_tier = ckpt.backend_tier;
  }
  return setup;
}

EvalArtifacts write_eval(const EvalResult& result, const Vocabulary& vocab,
                         const std::string& out_prefix) {
  EvalArtifacts arts;
  arts.report = result.report;
  arts.json_path = out_prefix + ".json";
  arts.tsv_path = out_prefix + ".tsv";

  json j;
  j["bleu"] = result.report.bleu;
  j["precisions"] = result.report.precisions;
  j["bp"] = result.report.bp;
  j["hyp_len"] = result.report.hyp_len;
  j["ref_len"] = result.report.ref_len;
  j["buckets"] = json::array();
  for (const auto& b : result.report.buckets) {
    j["buckets"].push_back(
        {{"min_dur", b.min_dur}, {"max_dur", b.max_dur}, {"count", b.count}, {"bleu", b.bleu}});
  }
  std::ofstream jf(arts.json_path, std::ios::binary);
  jf << j.dump(2) << "\n";
  if (!jf) throw ConfigError("cannot write " + arts.json_path);

  auto surface = [&](const std::vector<int32_t>& ids) {
    std::string s;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (i) s += ' ';
      s += vocab.surface(ids[i]);
    }
    return s;
  };
  std::ofstream tf(arts.tsv_path, std::ios::binary);
  tf << "id\tduration\thyp\tref\n";
  for (const auto& s : result.sentences) {
    tf << s.id << "\t" << s.duration << "\t" << surface(s.hyp) << "\t" << surface(s.ref) << "\n";
  }
  if (!tf) throw ConfigError("cannot write " + arts.tsv_path);
  return arts;
}

void merge_curves(const std::vector<std::string>& inputs, const std::string& out_path) {
  if (inputs.empty()) throw UsageError("curves: no metrics files given");
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + out_path);
  f << "run,stage,step,dev_loss\n";
  for (const auto& path : inputs) {
    const auto rows = read_metrics_csv(path);  // throws ParseError on schema mismatch
    for (const auto& r : rows) {
      if (r.split != "dev") continue;
      f << path << "," << r.stage << "," << r.step << "," << format_float(r.loss) << "\n";
    }
  }
}

// ----- ablation orchestration ---------------------------------------------------

Ablator::Ablator(RunConfig cfg, std::string data_dir, std::string out_dir, bool force)
    : cfg_(std::move(cfg)), data_dir_(std::move(data_dir)), out_dir_(std::move(out_dir)) {
  if (force) fs::remove_all(out_dir_ + "/cells");
  fs::create_directories(out_dir_ + "/cells");
  fs::create_directories(out_dir_ + "/pretrain");
  world_ = load_manifest(data_dir_ + "/manifest.json");
  load_corpora();
}

void Ablator::load_corpora() {
  st_train_ = read_corpus(corpus_path(data_dir_, "st", "train"));
  st_dev_ = read_corpus(corpus_path(data_dir_, "st", "dev"));
  st_test_ = read_corpus(corpus_path(data_dir_, "st", "test"));
  asr_train_ = read_corpus(corpus_path(data_dir_, "asr", "train"));
  asr_dev_ = read_corpus(corpus_path(data_dir_, "asr", "dev"));
  text_train_ = read_corpus(corpus_path(data_dir_, "text", "train"));
  text_dev_ = read_corpus(corpus_path(data_dir_, "text", "dev"));
}

std::string Ablator::cell_dir(const std::string& id) const { return out_dir_ + "/cells/" + id; }

std::string Ablator::ensure_pretrained(const std::string& kind, const std::string& tier) {
  const std::string path = out_dir_ + "/pretrain/" + kind + "-" + tier + ".pcst";
  if (fs::exists(path)) return path;
  if (kind == "frontend") {
    pretrain_frontend(tier, cfg_.model, cfg_.pre_frontend, asr_train_, asr_dev_, path);
  } else {
    pretrain_backend(tier, cfg_.model, cfg_.pre_backend, text_train_, text_dev_, path);
  }
  return path;
}

Ablator::CellRefs Ablator::run_stage1(const std::string& fe, const std::string& be, LossMode data,
                                      uint64_t seed) {
  const std::string id = "s1-" + std::string(data == LossMode::asr ? "asr" : "st") + "-fe-" + fe +
                         "-be-" + be + "-seed" + std::to_string(seed);
  CellRefs refs;
  refs.dir = cell_dir(id);
  refs.ckpt = refs.dir + "/ckpt-final.pcst";
  refs.metrics = refs.dir + "/metrics.csv";
  if (fs::exists(refs.ckpt) && fs::exists(refs.metrics)) return refs;

  TrainSetup setup = compose_init(cfg_, 1, data, seed,
                                  {out_dir_ + "/pretrain/frontend-" + fe + ".pcst",
                                   out_dir_ + "/pretrain/backend-" + be + ".pcst"},
                                  false);
  const auto& train = (data == LossMode::asr) ? asr_train_ : st_train_;
  const auto& dev = (data == LossMode::asr) ? asr_dev_ : st_dev_;
  train_stage(setup.params, cfg_.model, setup.scfg, train, dev, refs.dir);
  return refs;
}

Ablator::CellRefs Ablator::run_stage2(const std::string& fe, const std::string& be, uint64_t seed,
                                      bool cold, const std::string& parent_ckpt,
                                      const std::string& parent_id) {
  const std::string id = cold ? "s2-cold-fe-" + fe + "-be-" + be + "-seed" + std::to_string(seed)
                              : "s2-from-" + parent_id;
  CellRefs refs;
  refs.dir = cell_dir(id);
  refs.ckpt = refs.dir + "/ckpt-final.pcst";
  refs.metrics = refs.dir + "/metrics.csv";
  if (fs::exists(refs.ckpt) && fs::exists(refs.metrics)) return refs;

  std::vector<std::string> inits;
  if (cold) {
    inits = {out_dir_ + "/pretrain/frontend-" + fe + ".pcst",
             out_dir_ + "/pretrain/backend-" + be + ".pcst"};
  } else {
    inits = {parent_ckpt};
  }
  TrainSetup setup = compose_init(cfg_, 2, LossMode::st, seed, inits, cold);
  if (cold) {
    setup.scfg.frontend_tier = load_checkpoint(inits[0]).frontend_tier;
    setup.scfg.backend_tier = load_checkpoint(inits[1]).backend_tier;
  }
  train_stage(setup.params, cfg_.model, setup.scfg, st_train_, st_dev_, refs.dir);
  return refs;
}

double Ablator::eval_checkpoint(const std::string& ckpt, const std::string& out_prefix) {
  const std::string json_path = out_prefix + ".json";
  if (fs::exists(json_path)) {
    std::ifstream f(json_path);
    json j;
    f >> j;
    return j.at("bleu").get<double>();
  }
  ParamStoreF params = init_params(cfg_.model, 0);
  const Checkpoint c = load_checkpoint(ckpt);
  apply_checkpoint(c, params, /*strict=*/false);
  EvalResult result = evaluate(params, cfg_.model, st_test_, cfg_.beam, cfg_.max_len);
  EvalArtifacts arts = write_eval(result, world_.lang.vocab(), out_prefix);
  return arts.report.bleu;
}

void Ablator::run_units(std::vector<std::function<void()>> units) {
  int jobs = cfg_.jobs > 0 ? cfg_.jobs : omp_get_num_procs();
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(units.size())));
  if (jobs == 1) {
    for (auto& u : units) u();
    return;
  }
  // Each pipeline runs single-threaded; results are disk artifacts, so the
  // outcome is independent of scheduling.
  std::atomic<size_t> next{0};
  std::vector<std::string> errors(units.size());
  std::vector<std::thread> workers;
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&]() {
      omp_set_num_threads(1);
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= units.size()) break;
        try {
          units[i]();
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  for (const auto& err : errors) {
    if (!err.empty()) throw ConfigError("ablation unit failed: " + err);
  }
}

namespace {

double mean_of(const std::map<std::string, double>& per_seed) {
  double sum = 0.0;
  for (const auto& [k, v] : per_seed) sum += v;
  return per_seed.empty() ? 0.0 : sum / static_cast<double>(per_seed.size());
}

json seed_block(const std::map<std::string, double>& per_seed) {
  return json{{"per_seed", per_seed}, {"mean", mean_of(per_seed)}};
}

}  // namespace

json Ablator::strategies() {
  ensure_pretrained("frontend", "ctc");
  ensure_pretrained("backend", "mt");

  struct SeedOut {
    CellRefs s1_st, s1_asr, s2_d, s2_c, s2_b;
    double bleu_s1 = 0, bleu_d = 0, bleu_c = 0, bleu_b = 0;
  };
  std::map<uint64_t, SeedOut> outs;
  for (uint64_t seed : cfg_.seeds) outs[seed];

  std::vector<std::function<void()>> units;
  for (uint64_t seed : cfg_.seeds) {
    SeedOut* out = &outs[seed];
    units.push_back([this, seed, out]() {  // (a) and (d): ST stage 1, then stage 2
      out->s1_st = run_stage1("ctc", "mt", LossMode::st, seed);
      out->bleu_s1 = eval_checkpoint(out->s1_st.ckpt, out->s1_st.dir + "/eval");
      const std::string parent_id = fs::path(out->s1_st.dir).filename().string();
      out->s2_d = run_stage2("ctc", "mt", seed, false, out->s1_st.ckpt, parent_id);
      out->bleu_d = eval_checkpoint(out->s2_d.ckpt, out->s2_d.dir + "/eval");
    });
    units.push_back([this, seed, out]() {  // (c): ASR stage 1, then stage 2
      out->s1_asr = run_stage1("ctc", "mt", LossMode::asr, seed);
      const std::string parent_id = fs::path(out->s1_asr.dir).filename().string();
      out->s2_c = run_stage2("ctc", "mt", seed, false, out->s1_asr.ckpt, parent_id);
      out->bleu_c = eval_checkpoint(out->s2_c.ckpt, out->s2_c.dir + "/eval");
    });
    units.push_back([this, seed, out]() {  // (b): stage 2 only, cold start
      out->s2_b = run_stage2("ctc", "mt", seed, true, "", "");
      out->bleu_b = eval_checkpoint(out->s2_b.ckpt, out->s2_b.dir + "/eval");
    });
  }
  run_units(std::move(units));

  std::map<std::string, double> s1_per_seed, d2_per_seed, c2_per_seed, b2_per_seed;
  json cells = json::object();
  for (auto& [seed, out] : outs) {
    const std::string key = std::to_string(seed);
    s1_per_seed[key] = out.bleu_s1;
    d2_per_seed[key] = out.bleu_d;
    c2_per_seed[key] = out.bleu_c;
    b2_per_seed[key] = out.bleu_b;
    cells[key] = {
        {"s1_st", {{"ckpt", out.s1_st.ckpt}, {"metrics", out.s1_st.metrics}}},
        {"s1_asr", {{"ckpt", out.s1_asr.ckpt}, {"metrics", out.s1_asr.metrics}}},
        {"s2_d", {{"ckpt", out.s2_d.ckpt}, {"metrics", out.s2_d.metrics}}},
        {"s2_c", {{"ckpt", out.s2_c.ckpt}, {"metrics", out.s2_c.metrics}}},
        {"s2_b", {{"ckpt", out.s2_b.ckpt}, {"metrics", out.s2_b.metrics}}},
    };
  }

  // Rows mirror the four training strategies: (a) ST stage 1 only,
  // (b) stage 2 only, (c) ASR stage 1 + stage 2, (d) ST stage 1 + stage 2.
  json rows = json::array();
  rows.push_back({{"strategy", "a"},
                  {"stage1_data", "st"},
                  {"stage2", false},
                  {"bleu_stage1", seed_block(s1_per_seed)},
                  {"bleu_stage2", nullptr}});
  rows.push_back({{"strategy", "b"},
                  {"stage1_data", "none"},
                  {"stage2", true},
                  {"bleu_stage1", nullptr},
                  {"bleu_stage2", seed_block(b2_per_seed)}});
  rows.push_back({{"strategy", "c"},
                  {"stage1_data", "asr"},
                  {"stage2", true},
                  {"bleu_stage1", nullptr},
                  {"bleu_stage2", seed_block(c2_per_seed)}});
  rows.push_back({{"strategy", "d"},
                  {"stage1_data", "st"},
                  {"stage2", true},
                  {"bleu_stage1", seed_block(s1_per_seed)},
                  {"bleu_stage2", seed_block(d2_per_seed)}});

  json report;
  report["table"] = "strategies";
  report["preset"] = cfg_.preset;
  report["seeds"] = cfg_.seeds;
  report["frontend"] = "ctc";
  report["backend"] = "mt";
  report["rows"] = rows;
  report["cells"] = cells;

  const std::string path = out_dir_ + "/strategies-report.json";
  std::ofstream f(path, std::ios::binary);
  f << report.dump(2) << "\n";
  report["report_path"] = path;
  return report;
}

json Ablator::frontend_ablation() {
  const std::vector<std::string> tiers = {"ctc", "ssl", "random"};
  for (const auto& tier : tiers) ensure_pretrained("frontend", tier);
  ensure_pretrained("backend", "mt");

  struct CellOut {
    double bleu_s1 = 0, bleu_s2 = 0;
    CellRefs s1, s2;
  };
  std::map<std::string, std::map<uint64_t, CellOut>> outs;
  std::vector<std::function<void()>> units;
  for (const auto& tier : tiers) {
    for (uint64_t seed : cfg_.seeds) {
      CellOut* out = &outs[tier][seed];
      units.push_back([this, tier, seed, out]() {
        out->s1 = run_stage1(tier, "mt", LossMode::st, seed);
        out->bleu_s1 = eval_checkpoint(out->s1.ckpt, out->s1.dir + "/eval");
        const std::string parent_id = fs::path(out->s1.dir).filename().string();
        out->s2 = run_stage2(tier, "mt", seed, false, out->s1.ckpt, parent_id);
        out->bleu_s2 = eval_checkpoint(out->s2.ckpt, out->s2.dir + "/eval");
      });
    }
  }
  run_units(std::move(units));

  json rows = json::array();
  for (const auto& tier : tiers) {
    std::map<std::string, double> s1, s2;
    json cells = json::object();
    for (auto& [seed, out] : outs[tier]) {
      s1[std::to_string(seed)] = out.bleu_s1;
      s2[std::to_string(seed)] = out.bleu_s2;
      cells[std::to_string(seed)] = {{"stage1_ckpt", out.s1.ckpt},
                                     {"stage2_ckpt", out.s2.ckpt},
                                     {"stage1_metrics", out.s1.metrics},
                                     {"stage2_metrics", out.s2.metrics}};
    }
    rows.push_back({{"tier", tier},
                    {"frontend_ckpt", out_dir_ + "/pretrain/frontend-" + tier + ".pcst"},
                    {"provenance", tier == "random" ? "init-only" : "pretrained"},
                    {"bleu_stage1", seed_block(s1)},
                    {"bleu_stage2", seed_block(s2)},
                    {"cells", cells}});
  }
  json report;
  report["table"] = "frontend";
  report["preset"] = cfg_.preset;
  report["seeds"] = cfg_.seeds;
  report["backend"] = "mt";
  report["rows"] = rows;
  const std::string path = out_dir_ + "/frontend-report.json";
  std::ofstream f(path, std::ios::binary);
  f << report.dump(2) << "\n";
  report["report_path"] = path;
  return report;
}

json Ablator::backend_ablation() {
  const std::vector<std::string> tiers = {"mt", "lm", "random"};
  ensure_pretrained("frontend", "ctc");
  for (const auto& tier : tiers) ensure_pretrained("backend", tier);

  struct CellOut {
    double bleu_s1 = 0, bleu_s2 = 0;
    CellRefs s1, s2;
  };
  std::map<std::string, std::map<uint64_t, CellOut>> outs;
  std::vector<std::function<void()>> units;
  for (const auto& tier : tiers) {
    for (uint64_t seed : cfg_.seeds) {
      CellOut* out = &outs[tier][seed];
      units.push_back([this, tier, seed, out]() {
        out->s1 = run_stage1("ctc", tier, LossMode::st, seed);
        out->bleu_s1 = eval_checkpoint(out->s1.ckpt, out->s1.dir + "/eval");
        const std::string parent_id = fs::path(out->s1.dir).filename().string();
        out->s2 = run_stage2("ctc", tier, seed, false, out->s1.ckpt, parent_id);
        out->bleu_s2 = eval_checkpoint(out->s2.ckpt, out->s2.dir + "/eval");
      });
    }
  }
  run_units(std::move(units));

  json rows = json::array();
  for (const auto& tier : tiers) {
    std::map<std::string, double> s1, s2;
    json cells = json::object();
    for (auto& [seed, out] : outs[tier]) {
      s1[std::to_string(seed)] = out.bleu_s1;
      s2[std::to_string(seed)] = out.bleu_s2;
      cells[std::to_string(seed)] = {{"stage1_ckpt", out.s1.ckpt},
                                     {"stage2_ckpt", out.s2.ckpt},
                                     {"stage1_metrics", out.s1.metrics},
                                     {"stage2_metrics", out.s2.metrics}};
    }
    rows.push_back({{"tier", tier},
                    {"backend_ckpt", out_dir_ + "/pretrain/backend-" + tier + ".pcst"},
                    {"provenance", tier == "random" ? "init-only" : "pretrained"},
                    {"bleu_stage1", seed_block(s1)},
                    {"bleu_stage2", seed_block(s2)},
                    {"cells", cells}});
  }
  json report;
  report["table"] = "backend";
  report["preset"] = cfg_.preset;
  report["seeds"] = cfg_.seeds;
  report["frontend"] = "ctc";
  report["rows"] = rows;
  const std::string path = out_dir_ + "/backend-report.json";
  std::ofstream f(path, std::ios::binary);
  f << report.dump(2) << "\n";
  report["report_path"] = path;
  return report;
}

}  // namespace pcst
