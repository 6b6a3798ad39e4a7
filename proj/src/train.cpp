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

#include "pcst/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace pcst {

std::string format_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// ----- optimizer -------------------------------------------------------------

void adamw_step(ParamStoreF& params, const std::map<std::string, TensorF>& grads,
                AdamState& state, double lr, const OptimConfig& oc) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(oc.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(oc.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    if (params.frozen(name))
      throw IntegrityError("adamw_step: frozen tensor " + name + " in update set");
    TensorF& p = params.at(name);
    if (p.shape() != g.shape())
      throw IntegrityError("adamw_step: grad shape " + g.shape_str() + " vs param " +
                           p.shape_str() + " for " + name);
    auto it = state.moments.find(name);
    if (it == state.moments.end()) {
      it = state.moments.emplace(name, std::make_pair(TensorF(p.shape()), TensorF(p.shape())))
               .first;
    }
    TensorF& m = it->second.first;
    TensorF& v = it->second.second;
    const double wd = (p.rank() >= 2) ? oc.weight_decay : 0.0;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g.at(i));
      double pi = static_cast<double>(p.at(i));
      pi -= lr * wd * pi;  // decoupled decay before the moment term
      const double mi = oc.beta1 * static_cast<double>(m.at(i)) + (1.0 - oc.beta1) * gi;
      const double vi = oc.beta2 * static_cast<double>(v.at(i)) + (1.0 - oc.beta2) * gi * gi;
      m.at(i) = static_cast<float>(mi);
      v.at(i) = static_cast<float>(vi);
      pi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + oc.eps);
      p.at(i) = static_cast<float>(pi);
    }
  }
}

double lr_at(int64_t step, int64_t total_steps, double peak, double warmup_ratio, double floor) {
  if (total_steps <= 0) throw ConfigError("lr_at: total_steps must be positive");
  if (step < 0 || step > total_steps)
    throw UsageError("lr_at: step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + "]");
  const int64_t warmup = std::llround(warmup_ratio * static_cast<double>(total_steps));
  double lr;
  if (step < warmup) {
    lr = peak * static_cast<double>(step) / static_cast<double>(warmup);
  } else {
    const int64_t denom = std::max<int64_t>(1, total_steps - warmup);
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(denom);
    lr = 0.5 * peak * (1.0 + std::cos(3.14159265358979323846 * progress));
    lr = std::max(lr, floor);
  }
  return lr;
}

// ----- metrics ----------------------------------------------------------------

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("write_metrics_csv: cannot open " + path);
  f << "step,stage,split,loss,lr\n";
  for (const auto& r : rows) {
    f << r.step << "," << r.stage << "," << r.split << "," << format_float(r.loss) << ","
      << format_float(r.lr) << "\n";
  }
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("read_metrics_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "step,stage,split,loss,lr")
    throw ParseError(path + ": bad metrics header");
  std::vector<MetricRow> rows;
  int64_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    MetricRow r;
    char c1, c2;
    std::string rest;
    if (!(is >> r.step >> c1 >> r.stage >> c2) || c1 != ',' || c2 != ',')
      throw ParseError(path + ": line " + std::to_string(lineno) + ": bad row");
    std::getline(is, rest);
    const size_t p1 = rest.find(',');
    const size_t p2 = rest.find(',', p1 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos)
      throw ParseError(path + ": line " + std::to_string(lineno) + ": bad row");
    r.split = rest.substr(0, p1);
    r.loss = std::stod(rest.substr(p1 + 1, p2 - p1 - 1));
    r.lr = std::stod(rest.substr(p2 + 1));
    rows.push_back(std::move(r));
  }
  return rows;
}

// ----- batch helpers -----------------------------------------------------------

std::vector<BatchItem<float>> to_batch(const std::vector<Triple>& triples, LossMode mode) {
  std::vector<BatchItem<float>> batch;
  batch.reserve(triples.size());
  for (const auto& tr : triples) {
    BatchItem<float> item;
    item.frames = tr.frames;
    item.labels = (mode == LossMode::asr) ? tr.src : tr.tgt;
    batch.push_back(std::move(item));
  }
  return batch;
}

std::map<std::string, TensorF> lst_gradients(const ParamStoreF& params, const ModelConfig& mcfg,
                                             LossMode mode, const std::vector<Triple>& batch,
                                             double* loss_out) {
  TapeF tape;
  BoundParams<float> bp(tape, params);
  auto root = lst_loss(tape, bp, mcfg, to_batch(batch, mode));
  const double loss = static_cast<double>(tape.value(root).at(0));
  if (loss_out) *loss_out = loss;
  std::map<std::string, TensorF> grads;
  if (!std::isfinite(loss)) return grads;
  tape.backward(root);
  for (const auto& name : params.trainable_names()) grads.emplace(name, tape.grad(bp.at(name)));
  return grads;
}

double eval_loss(const ParamStoreF& params, const ModelConfig& mcfg, LossMode mode,
                 const std::vector<Triple>& corpus, int64_t batch_size, int64_t limit) {
  if (corpus.empty()) throw UsageError("eval_loss: empty corpus");
  ParamStoreF frozen = params;
  frozen.freeze(Group::frontend);
  frozen.freeze(Group::adapter);
  frozen.freeze(Group::backend);
  const int64_t n = (limit > 0) ? std::min<int64_t>(limit, static_cast<int64_t>(corpus.size()))
                                : static_cast<int64_t>(corpus.size());
  double weighted = 0.0;
  int64_t positions = 0;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t end = std::min<int64_t>(n, start + batch_size);
    std::vector<Triple> chunk(corpus.begin() + start, corpus.begin() + end);
    int64_t chunk_positions = 0;
    for (const auto& tr : chunk) {
      const auto& labels = (mode == LossMode::asr) ? tr.src : tr.tgt;
      chunk_positions += static_cast<int64_t>(labels.size()) + 1;
    }
    TapeF tape;
    BoundParams<float> bp(tape, frozen);
    auto root = lst_loss(tape, bp, mcfg, to_batch(chunk, mode));
    weighted += static_cast<double>(tape.value(root).at(0)) * static_cast<double>(chunk_positions);
    positions += chunk_positions;
  }
  return weighted / static_cast<double>(positions);
}

// ----- stage training ------------------------------------------------------------

TrainResult train_stage(ParamStoreF& params, const ModelConfig& mcfg, const StageConfig& cfg,
                        const std::vector<Triple>& train, const std::vector<Triple>& dev,
                        const std::string& outdir) {
  if (cfg.stage != 1 && cfg.stage != 2)
    throw ConfigError("train_stage: stage must be 1 or 2, got " + std::to_string(cfg.stage));
  if (train.empty()) throw DataError("train_stage: empty training corpus");
  std::filesystem::create_directories(outdir);

  params.clear_freeze();
  params.freeze(Group::frontend);
  if (cfg.stage == 1) params.freeze(Group::backend);

  const int64_t n = static_cast<int64_t>(train.size());
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total =
      (cfg.max_steps > 0) ? cfg.max_steps : cfg.epochs * steps_per_epoch;
  if (total <= 0) throw ConfigError("train_stage: zero total steps");

  OptimConfig oc;
  oc.weight_decay = cfg.weight_decay;
  AdamState state;
  Rng rng(hash_combine(cfg.seed, 0x73687566));

  std::map<std::string, std::string> echo = {
      {"stage", std::to_string(cfg.stage)},
      {"data", cfg.data_kind == LossMode::asr ? "asr" : "st"},
      {"epochs", std::to_string(cfg.epochs)},
      {"peak_lr", format_float(cfg.peak_lr)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"warmup_ratio", format_float(cfg.warmup_ratio)},
      {"weight_decay", format_float(cfg.weight_decay)},
      {"seed", std::to_string(cfg.seed)},
      {"total_steps", std::to_string(total)},
  };

  TrainResult result;
  result.metrics_csv = outdir + "/metrics.csv";
  auto log_dev = [&](int64_t step, double lr) {
    if (dev.empty()) return;
    const double dl = eval_loss(params, mcfg, cfg.data_kind, dev, cfg.batch_size, cfg.dev_limit);
    result.metrics.push_back({step, cfg.stage, "dev", dl, lr});
  };

  auto save = [&](int64_t step, const std::string& name) {
    Checkpoint ckpt;
    ckpt.params = params;
    ckpt.moments = state.moments;
    ckpt.rng_state = rng.serialize();
    ckpt.step = step;
    ckpt.config_echo = echo;
    ckpt.frontend_tier = cfg.frontend_tier;
    ckpt.backend_tier = cfg.backend_tier;
    const std::string path = outdir + "/" + name;
    save_checkpoint(ckpt, path);
    return path;
  };

  log_dev(0, lr_at(0, total, cfg.peak_lr, cfg.warmup_ratio, cfg.lr_floor));

  std::string last_ckpt;
  int64_t step = 0;
  bool done = false;
  for (int64_t epoch = 0; !done; ++epoch) {
    if (cfg.max_steps == 0 && epoch >= cfg.epochs) break;
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int64_t start = 0; start < n && !done; start += cfg.batch_size) {
      const int64_t end = std::min<int64_t>(n, start + cfg.batch_size);
      std::vector<Triple> batch;
      batch.reserve(static_cast<size_t>(end - start));
      for (int64_t i = start; i < end; ++i)
        batch.push_back(train[static_cast<size_t>(order[static_cast<size_t>(i)])]);

      double loss = 0.0;
      auto grads = lst_gradients(params, mcfg, cfg.data_kind, batch, &loss);
      if (!std::isfinite(loss)) {
        throw NumericError("train_stage: non-finite loss at step " + std::to_string(step) +
                           "; last good checkpoint: " + (last_ckpt.empty() ? "none" : last_ckpt));
      }
      const double lr = lr_at(step, total, cfg.peak_lr, cfg.warmup_ratio, cfg.lr_floor);
      adamw_step(params, grads, state, lr, oc);
      ++step;

      if (step % cfg.eval_interval == 0 || step == total) {
        result.metrics.push_back({step, cfg.stage, "train", loss, lr});
        log_dev(step, lr);
      }
      if (cfg.save_interval > 0 && step % cfg.save_interval == 0 && step != total) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "ckpt-step%06lld.pcst", static_cast<long long>(step));
        last_ckpt = save(step, buf);
      }
      if (step >= total) done = true;
    }
  }

  result.final_ckpt = save(step, "ckpt-final.pcst");
  write_metrics_csv(result.metrics, result.metrics_csv);
  return result;
}

// ----- pretraining ---------------------------------------------------------------

namespace {

struct PackedFrames {
  TensorF frames;
  Segments seg;
};

PackedFrames pack_frames(const std::vector<Triple>& batch, int64_t d_frames) {
  std::vector<int64_t> lens;
  int64_t total = 0;
  for (const auto& tr : batch) {
    lens.push_back(tr.frames.rows());
    total += tr.frames.rows();
  }
  PackedFrames out{TensorF({total, d_frames}), Segments::from_lengths(lens)};
  int64_t row = 0;
  for (const auto& tr : batch) {
    std::copy(tr.frames.data(), tr.frames.data() + tr.frames.numel(),
              out.frames.data() + row * d_frames);
    row += tr.frames.rows();
  }
  return out;
}

std::vector<std::vector<int32_t>> ctc_targets(const std::vector<Triple>& batch,
                                              const Vocabulary& vocab) {
  std::vector<std::vector<int32_t>> targets;
  for (const auto& tr : batch) {
    std::vector<int32_t> t;
    for (int32_t id : tr.src) t.push_back(vocab.src_index(id));
    targets.push_back(std::move(t));
  }
  return targets;
}

std::vector<uint8_t> ssl_mask(const PackedFrames& packed, double rate, uint64_t key) {
  Rng rng(key);
  std::vector<uint8_t> mask(static_cast<size_t>(packed.seg.total()), 0);
  for (int64_t s = 0; s < packed.seg.count(); ++s) {
    bool any = false;
    for (int64_t i = 0; i < packed.seg.len[static_cast<size_t>(s)]; ++i) {
      if (rng.uniform() < rate) {
        mask[static_cast<size_t>(packed.seg.off[static_cast<size_t>(s)] + i)] = 1;
        any = true;
      }
    }
    if (!any) {
      const int64_t pick = rng.uniform_int(packed.seg.len[static_cast<size_t>(s)]);
      mask[static_cast<size_t>(packed.seg.off[static_cast<size_t>(s)] + pick)] = 1;
    }
  }
  return mask;
}

std::vector<std::vector<int32_t>> lm_sequences(const std::vector<Triple>& batch, bool with_source) {
  std::vector<std::vector<int32_t>> seqs;
  for (const auto& tr : batch) {
    std::vector<int32_t> s;
    s.push_back(Vocabulary::kBos);
    if (with_source) {
      s.insert(s.end(), tr.src.begin(), tr.src.end());
      s.push_back(Vocabulary::kSep);
    }
    if (tr.tgt.empty()) throw ConfigError("backend pretraining needs parallel text");
    s.insert(s.end(), tr.tgt.begin(), tr.tgt.end());
    s.push_back(Vocabulary::kEos);
    seqs.push_back(std::move(s));
  }
  return seqs;
}

// Shared epoch/step loop for the pretraining tiers.
struct PretrainLoop {
  const PretrainConfig& cfg;
  ParamStoreF& params;
  std::vector<MetricRow>& metrics;
  int stage_tag;

  // loss_fn builds the loss on a fresh tape; dev_fn returns the dev metric.
  void run(int64_t n, const std::function<double(const std::vector<int64_t>&, int64_t)>& step_fn,
           const std::function<double()>& dev_fn) {
    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total = cfg.epochs * steps_per_epoch;
    Rng rng(hash_combine(cfg.seed, 0x70726574));
    metrics.push_back({0, stage_tag, "dev", dev_fn(), 0.0});
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::vector<int64_t> order(static_cast<size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      for (int64_t start = 0; start < n; start += cfg.batch_size) {
        const int64_t end = std::min<int64_t>(n, start + cfg.batch_size);
        std::vector<int64_t> idx(order.begin() + start, order.begin() + end);
        const double lr = lr_at(step, total, cfg.peak_lr, cfg.warmup_ratio);
        const double loss = step_fn(idx, step);
        if (!std::isfinite(loss))
          throw NumericError("pretraining: non-finite loss at step " + std::to_string(step));
        ++step;
        if (step % cfg.eval_interval == 0 || step == total) {
          metrics.push_back({step, stage_tag, "train", loss, lr});
          metrics.push_back({step, stage_tag, "dev", dev_fn(), lr});
        }
      }
    }
  }
};

Checkpoint group_checkpoint(const ParamStoreF& params, Group keep, const std::string& frontend_tier,
                            const std::string& backend_tier, int64_t step) {
  Checkpoint ckpt;
  for (const auto& [name, e] : params) {
    if (e.group != keep || is_aux_param(name)) continue;  // pretraining heads are discarded
    ckpt.params.add(name, e.group, e.value);
  }
  ckpt.step = step;
  ckpt.frontend_tier = frontend_tier;
  ckpt.backend_tier = backend_tier;
  return ckpt;
}

}  // namespace

PretrainResult pretrain_frontend(const std::string& tier, const ModelConfig& mcfg,
                                 const PretrainConfig& cfg, const std::vector<Triple>& train,
                                 const std::vector<Triple>& dev, const std::string& out_path) {
  if (tier != "ctc" && tier != "ssl" && tier != "random")
    throw ConfigError("pretrain_frontend: unknown tier '" + tier + "'");
  ParamStoreF params = init_params(mcfg, cfg.seed);
  params.freeze(Group::adapter);
  params.freeze(Group::backend);
  PretrainResult result;

  if (tier == "random") {
    // Seeded initialization only; no data touches the parameters.
    Checkpoint ckpt = group_checkpoint(params, Group::frontend, "random", "none", 0);
    save_checkpoint(ckpt, out_path);
    result.ckpt = out_path;
    return result;
  }
  if (train.empty()) throw ConfigError("pretrain_frontend: tier '" + tier + "' needs an ASR corpus");

  const int32_t n_src = (mcfg.vocab_total - Vocabulary::kSpecials) / 2;
  const Vocabulary vocab{n_src, n_src};
  OptimConfig oc;
  oc.weight_decay = cfg.weight_decay;
  AdamState state;

  auto grads_of = [&](const std::function<TapeF::Ref(TapeF&, BoundParams<float>&)>& build,
                      double* loss_out) {
    TapeF tape;
    BoundParams<float> bp(tape, params);
    auto root = build(tape, bp);
    *loss_out = static_cast<double>(tape.value(root).at(0));
    std::map<std::string, TensorF> grads;
    if (!std::isfinite(*loss_out)) return grads;
    tape.backward(root);
    for (const auto& name : params.trainable_names()) grads.emplace(name, tape.grad(bp.at(name)));
    return grads;
  };

  if (tier == "ctc") {
    add_ctc_head(params, mcfg, n_src + 1, cfg.seed);
    auto dev_fn = [&]() {
      if (dev.empty()) return 0.0;
      ParamStoreF frozen = params;
      frozen.freeze(Group::frontend);
      double total = 0.0;
      int64_t count = 0;
      for (size_t start = 0; start < dev.size(); start += static_cast<size_t>(cfg.batch_size)) {
        const size_t end = std::min(dev.size(), start + static_cast<size_t>(cfg.batch_size));
        std::vector<Triple> chunk(dev.begin() + static_cast<int64_t>(start),
                                  dev.begin() + static_cast<int64_t>(end));
        auto packed = pack_frames(chunk, mcfg.d_frames);
        TapeF tape;
        BoundParams<float> bp(tape, frozen);
        auto root = frontend_ctc_loss(tape, bp, mcfg, packed.frames, packed.seg,
                                      ctc_targets(chunk, vocab));
        total += static_cast<double>(tape.value(root).at(0)) * static_cast<double>(chunk.size());
        count += static_cast<int64_t>(chunk.size());
      }
      return total / static_cast<double>(count);
    };
    PretrainLoop loop{cfg, params, result.metrics, 0};
    loop.run(static_cast<int64_t>(train.size()),
             [&](const std::vector<int64_t>& idx, int64_t step) {
               std::vector<Triple> batch;
               for (int64_t i : idx) batch.push_back(train[static_cast<size_t>(i)]);
               auto packed = pack_frames(batch, mcfg.d_frames);
               double loss = 0.0;
               auto grads = grads_of(
                   [&](TapeF& tape, BoundParams<float>& bp) {
                     return frontend_ctc_loss(tape, bp, mcfg, packed.frames, packed.seg,
                                              ctc_targets(batch, vocab));
                   },
                   &loss);
               if (std::isfinite(loss)) {
                 adamw_step(params, grads, state,
                            lr_at(step, cfg.epochs * ((static_cast<int64_t>(train.size()) +
                                                       cfg.batch_size - 1) /
                                                      cfg.batch_size),
                                  cfg.peak_lr, cfg.warmup_ratio),
                            oc);
               }
               return loss;
             },
             dev_fn);
    result.dev_metric = dev_fn();
  } else {  // ssl
    if (cfg.ssl_mask_rate <= 0.0 || cfg.ssl_mask_rate >= 1.0)
      throw ConfigError("pretrain_frontend: ssl mask rate must be in (0,1), got " +
                        format_float(cfg.ssl_mask_rate));
    add_ssl_head(params, mcfg, cfg.seed);
    auto dev_fn = [&]() {
      if (dev.empty()) return 0.0;
      ParamStoreF frozen = params;
      frozen.freeze(Group::frontend);
      double total = 0.0;
      int64_t count = 0;
      for (size_t start = 0; start < dev.size(); start += static_cast<size_t>(cfg.batch_size)) {
        const size_t end = std::min(dev.size(), start + static_cast<size_t>(cfg.batch_size));
        std::vector<Triple> chunk(dev.begin() + static_cast<int64_t>(start),
                                  dev.begin() + static_cast<int64_t>(end));
        auto packed = pack_frames(chunk, mcfg.d_frames);
        auto mask = ssl_mask(packed, cfg.ssl_mask_rate, hash_combine(0x64657673, start));
        TapeF tape;
        BoundParams<float> bp(tape, frozen);
        auto root = frontend_ssl_loss(tape, bp, mcfg, packed.frames, packed.seg, mask);
        total += static_cast<double>(tape.value(root).at(0)) * static_cast<double>(chunk.size());
        count += static_cast<int64_t>(chunk.size());
      }
      return total / static_cast<double>(count);
    };
    PretrainLoop loop{cfg, params, result.metrics, 0};
    loop.run(static_cast<int64_t>(train.size()),
             [&](const std::vector<int64_t>& idx, int64_t step) {
               std::vector<Triple> batch;
               for (int64_t i : idx) batch.push_back(train[static_cast<size_t>(i)]);
               auto packed = pack_frames(batch, mcfg.d_frames);
               auto mask = ssl_mask(packed, cfg.ssl_mask_rate,
                                    hash_combine(hash_combine(cfg.seed, 0x6d61736b),
                                                 static_cast<uint64_t>(step)));
               double loss = 0.0;
               auto grads = grads_of(
                   [&](TapeF& tape, BoundParams<float>& bp) {
                     return frontend_ssl_loss(tape, bp, mcfg, packed.frames, packed.seg, mask);
                   },
                   &loss);
               if (std::isfinite(loss)) {
                 adamw_step(params, grads, state,
                            lr_at(step, cfg.epochs * ((static_cast<int64_t>(train.size()) +
                                                       cfg.batch_size - 1) /
                                                      cfg.batch_size),
                                  cfg.peak_lr, cfg.warmup_ratio),
                            oc);
               }
               return loss;
             },
             dev_fn);
    result.dev_metric = dev_fn();
  }

  Checkpoint ckpt = group_checkpoint(params, Group::frontend, tier, "none",
                                     result.metrics.empty() ? 0 : result.metrics.back().step);
  save_checkpoint(ckpt, out_path);
  result.ckpt = out_path;
  return result;
}

PretrainResult pretrain_backend(const std::string& tier, const ModelConfig& mcfg,
                                const PretrainConfig& cfg, const std::vector<Triple>& train,
                                const std::vector<Triple>& dev, const std::string& out_path) {
  if (tier != "mt" && tier != "lm" && tier != "random")
    throw ConfigError("pretrain_backend: unknown tier '" + tier + "'");
  ParamStoreF params = init_params(mcfg, cfg.seed);
  params.freeze(Group::frontend);
  params.freeze(Group::adapter);
  PretrainResult result;

  if (tier == "random") {
    Checkpoint ckpt = group_checkpoint(params, Group::backend, "none", "random", 0);
    save_checkpoint(ckpt, out_path);
    result.ckpt = out_path;
    return result;
  }
  if (train.empty()) throw ConfigError("pretrain_backend: tier '" + tier + "' needs a text corpus");
  const bool with_source = (tier == "mt");
  for (const auto& tr : train) {
    for (int32_t id : tr.src)
      if (id >= mcfg.vocab_total)
        throw ConfigError("pretrain_backend: corpus vocabulary exceeds the model's");
  }

  OptimConfig oc;
  oc.weight_decay = cfg.weight_decay;
  AdamState state;

  // Dev metric: perplexity over positions predicting the target side (the
  // source prefix of an MT sequence is not predictable from context).
  auto dev_fn = [&]() {
    if (dev.empty()) return 0.0;
    ParamStoreF frozen = params;
    frozen.freeze(Group::backend);
    double total = 0.0;
    int64_t count = 0;
    for (size_t start = 0; start < dev.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(dev.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<Triple> chunk(dev.begin() + static_cast<int64_t>(start),
                                dev.begin() + static_cast<int64_t>(end));
      auto seqs = lm_sequences(chunk, with_source);
      std::vector<int64_t> mask_from;
      int64_t positions = 0;
      for (size_t i = 0; i < seqs.size(); ++i) {
        const int64_t from =
            with_source ? static_cast<int64_t>(chunk[i].src.size()) + 1 : 0;
        mask_from.push_back(from);
        positions += static_cast<int64_t>(seqs[i].size()) - 1 - from;
      }
      TapeF tape;
      BoundParams<float> bp(tape, frozen);
      auto root = lm_loss(tape, bp, mcfg, seqs, mask_from);
      total += static_cast<double>(tape.value(root).at(0)) * static_cast<double>(positions);
      count += positions;
    }
    return std::exp(total / static_cast<double>(count));
  };

  PretrainLoop loop{cfg, params, result.metrics, 0};
  loop.run(static_cast<int64_t>(train.size()),
           [&](const std::vector<int64_t>& idx, int64_t step) {
             std::vector<Triple> batch;
             for (int64_t i : idx) batch.push_back(train[static_cast<size_t>(i)]);
             auto seqs = lm_sequences(batch, with_source);
             std::vector<int64_t> mask_from(seqs.size(), 0);  // all predictable positions
             TapeF tape;
             BoundParams<float> bp(tape, params);
             auto root = lm_loss(tape, bp, mcfg, seqs, mask_from);
             const double loss = static_cast<double>(tape.value(root).at(0));
             if (!std::isfinite(loss)) return loss;
             tape.backward(root);
             std::map<std::string, TensorF> grads;
             for (const auto& name : params.trainable_names())
               grads.emplace(name, tape.grad(bp.at(name)));
             adamw_step(params, grads, state,
                        lr_at(step, cfg.epochs * ((static_cast<int64_t>(train.size()) +
                                                   cfg.batch_size - 1) /
                                                  cfg.batch_size),
                              cfg.peak_lr, cfg.warmup_ratio),
                        oc);
             return loss;
           },
           dev_fn);
  result.dev_metric = dev_fn();

  Checkpoint ckpt = group_checkpoint(params, Group::backend, "none", tier,
                                     result.metrics.empty() ? 0 : result.metrics.back().step);
  save_checkpoint(ckpt, out_path);
  result.ckpt = out_path;
  return result;
}

}  // namespace pcst
