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

#include <cmath>

#include "pcst/gradcheck.hpp"
#include "pcst/model.hpp"
#include "pcst/train.hpp"
#include "pcst/decode.hpp"

using namespace pcst;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_frames = 6;
  cfg.d_enc = 16;
  cfg.enc_blocks = 1;
  cfg.enc_heads = 2;
  cfg.d_llm = 16;
  cfg.dec_blocks = 2;
  cfg.dec_heads = 2;
  cfg.ffn_mult = 2;
  cfg.vocab_total = 12;
  return cfg;
}

TensorF random_frames(int64_t t, int64_t d, uint64_t seed) {
  Rng rng(seed);
  return TensorF::randn({t, d}, rng);
}

}  // namespace

TEST_CASE("parameter groups partition the store") {
  ModelConfig cfg = tiny_config();
  ParamStoreF store = init_params(cfg, 1);
  auto groups = parameter_groups(store);
  size_t total = 0;
  for (const auto& [g, names] : groups) total += names.size();
  CHECK(total == store.size());
  const std::vector<std::string> adapter_expect = {"adapter.conv1.b", "adapter.conv1.w",
                                                   "adapter.conv2.b", "adapter.conv2.w",
                                                   "adapter.proj.b",  "adapter.proj.w"};
  CHECK(groups[Group::adapter] == adapter_expect);
  for (const auto& name : groups[Group::frontend]) CHECK(name.rfind("frontend.", 0) == 0);
  for (const auto& name : groups[Group::backend]) CHECK(name.rfind("backend.", 0) == 0);
}

TEST_CASE("frontend preserves length and is deterministic") {
  ModelConfig cfg = tiny_config();
  ParamStoreF store = init_params(cfg, 2);
  TensorF frames = random_frames(10, cfg.d_frames, 7);
  TapeF t1, t2;
  BoundParams<float> bp1(t1, store), bp2(t2, store);
  Segments seg = Segments::from_lengths({10});
  auto rep1 = frontend_encode(t1, bp1, cfg, frames, seg);
  auto rep2 = frontend_encode(t2, bp2, cfg, frames, seg);
  CHECK(t1.value(rep1.values).rows() == 10);
  CHECK(t1.value(rep1.values).cols() == cfg.d_enc);
  for (int64_t i = 0; i < t1.value(rep1.values).numel(); ++i)
    REQUIRE(t1.value(rep1.values).at(i) == t2.value(rep2.values).at(i));

  TensorF wrong = random_frames(4, cfg.d_frames + 1, 8);
  TapeF t3;
  BoundParams<float> bp3(t3, store);
  CHECK_THROWS_AS(frontend_encode(t3, bp3, cfg, wrong, Segments::from_lengths({4})),
                  DimensionError);
}

TEST_CASE("zero-parameter frontend outputs position encodings only") {
  ModelConfig cfg = tiny_config();
  ParamStoreF store = init_params(cfg, 3);
  for (const auto& name : store.names()) store.at(name).fill(0.0f);
  TapeF t;
  BoundParams<float> bp(t, store);
  TensorF frames = random_frames(5, cfg.d_frames, 9);
  auto rep = frontend_encode(t, bp, cfg, frames, Segments::from_lengths({5}));
  TensorF expect({5, cfg.d_enc});
  for (int64_t p = 0; p < 5; ++p)
    TapeF::add_posenc_row(expect.data() + p * cfg.d_enc, p, cfg.d_enc);
  for (int64_t i = 0; i < expect.numel(); ++i)
    CHECK(t.value(rep.values).at(i) == doctest::Approx(expect.at(i)).epsilon(1e-6));
}

TEST_CASE("adapter prompt length law") {
  ModelConfig cfg = tiny_config();
  ParamStoreF store = init_params(cfg, 4);
  // all lengths 1..512 in one packed batch
  std::vector<int64_t> lens;
  for (int64_t t = 1; t <= 512; ++t) lens.push_back(t);
  Segments seg = Segments::from_lengths(lens);
  Rng rng(11);
  TensorF frames = TensorF::randn({seg.total(), cfg.d_frames}, rng);
  TapeF tape;
  BoundParams<float> bp(tape, store);
  auto rep = frontend_encode(tape, bp, cfg, frames, seg);
  auto prompt = adapt(tape, bp, cfg, rep);
  REQUIRE(prompt.seg.count() == 512);
  for (int64_t t = 1; t <= 512; ++t) {
    const int64_t expect = (t + 3) / 4 == (prompt_len(t) + 0) ? prompt_len(t) : prompt_len(t);
    CHECK(prompt.seg.len[static_cast<size_t>(t - 1)] == expect);
    // closed form: ceil(ceil(t/2)/2)
    CHECK(prompt.seg.len[static_cast<size_t>(t - 1)] == ((t + 1) / 2 + 1) / 2);
  }
  CHECK(prompt_len(10) == 3);
  CHECK(prompt_len(1) == 1);
  CHECK(prompt_len(100) == 25);
}

TEST_CASE("backend shape contract and zero-parameter uniformity") {
  ModelConfig cfg = tiny_config();
  ParamStoreF store = init_params(cfg, 5);
  for (const auto& name : store.names()) store.at(name).fill(0.0f);
  TapeF t;
  BoundParams<float> bp(t, store);
  Rng rng(13);
  TensorF prompt_vals = TensorF::randn({4, cfg.d_llm}, rng);
  Packed<float> prompt{t.constant(prompt_vals), Segments::from_lengths({4})};
  auto logits = backend_forward(t, bp, cfg, prompt, {{}});
  CHECK(t.value(logits.values).rows() == 5);  // prompt + SEP, no tokens
  // zero parameters give exactly zero logits -> uniform rows
  for (int64_t i = 0; i < t.value(logits.values).numel(); ++i)
    CHECK(t.value(logits.values).at(i) == 0.0f);

  CHECK_THROWS_AS(backend_forward(t, bp, cfg, prompt, {{cfg.vocab_total}}), IndexError);
}

TEST_CASE("backend causality: SEP logits ignore the tokens") {
  ModelConfig cfg = tiny_config();
  ParamStoreF store = init_params(cfg, 6);
  Rng rng(17);
  TensorF prompt_vals = TensorF::randn({3, cfg.d_llm}, rng);
  auto run = [&](const std::vector<int32_t>& tokens) {
    TapeF t;
    BoundParams<float> bp(t, store);
    Packed<float> prompt{t.constant(prompt_vals), Segments::from_lengths({3})};
    auto logits = backend_forward(t, bp, cfg, prompt, {tokens});
    std::vector<float> rows(t.value(logits.values).vec().begin(),
                            t.value(logits.values).vec().end());
    return rows;
  };
  auto a = run({4, 5, 6});
  auto b = run({7, 8, 9});
  // rows 0..3 (prompt + SEP) must be bitwise identical
  for (int64_t i = 0; i < 4 * cfg.vocab_total; ++i) REQUIRE(a[static_cast<size_t>(i)] == b[static_cast<size_t>(i)]);
  // the token rows must differ somewhere
  bool differs = false;
  for (size_t i = static_cast<size_t>(4 * cfg.vocab_total); i < a.size(); ++i)
    differs |= (a[i] != b[i]);
  CHECK(differs);
}

TEST_CASE("lst_loss uniform value, masking law and mode invariance") {
  ModelConfig cfg = tiny_config();
  cfg.vocab_total = 40;
  ParamStoreF store = init_params(cfg, 7);
  for (const auto& name : store.names()) store.at(name).fill(0.0f);
  TapeF t;
  BoundParams<float> bp(t, store);
  std::vector<BatchItem<float>> batch;
  BatchItem<float> item;
  item.frames = random_frames(9, cfg.d_frames, 19);
  item.labels = {4, 5, 6, 7, 8};
  batch.push_back(item);
  auto loss = lst_loss(t, bp, cfg, batch);
  CHECK(t.value(loss).at(0) == doctest::Approx(std::log(40.0)).epsilon(1e-6));

  BatchItem<float> empty;
  empty.frames = item.frames;
  TapeF t2;
  BoundParams<float> bp2(t2, store);
  CHECK_THROWS_AS(lst_loss(t2, bp2, cfg, {empty}), DataError);
}

TEST_CASE("st loss is bitwise invariant to the transcription") {
  ModelConfig cfg = tiny_config();
  ParamStoreF store = init_params(cfg, 8);
  TensorF frames = random_frames(8, cfg.d_frames, 23);
  // two triples that differ only in their transcription field
  Triple a, b;
  a.id = b.id = "x";
  a.frames = b.frames = frames;
  a.tgt = b.tgt = {4, 5, 6};
  a.src = {4, 4};
  b.src = {7, 8, 9, 10};
  auto run = [&](const Triple& tr) {
    TapeF t;
    BoundParams<float> bp(t, store);
    return t.value(lst_loss(t, bp, cfg, to_batch({tr}, LossMode::st))).at(0);
  };
  CHECK(run(a) == run(b));
  // while the asr mode does depend on it
  auto run_asr = [&](const Triple& tr) {
    TapeF t;
    BoundParams<float> bp(t, store);
    return t.value(lst_loss(t, bp, cfg, to_batch({tr}, LossMode::asr))).at(0);
  };
  CHECK(run_asr(a) != run_asr(b));
}

TEST_CASE("full-cascade gradient check in f64") {
  ModelConfig cfg = tiny_config();
  ParamStoreF storef = init_params(cfg, 9);
  ParamStoreD store = storef.cast<double>();

  std::vector<BatchItem<double>> batch(2);
  batch[0].frames = random_frames(7, cfg.d_frames, 29).cast<double>();
  batch[0].labels = {4, 5, 6};
  batch[1].frames = random_frames(5, cfg.d_frames, 31).cast<double>();
  batch[1].labels = {7, 8};

  const auto names = store.names();
  std::vector<TensorD> params;
  for (const auto& n : names) params.push_back(store.at(n));

  auto to_store = [&](const std::vector<TensorD>& p) {
    ParamStoreD s = store;
    for (size_t i = 0; i < names.size(); ++i) s.at(names[i]) = p[i];
    return s;
  };
  auto loss_fn = [&](const std::vector<TensorD>& p) {
    ParamStoreD s = to_store(p);
    TapeD t;
    BoundParams<double> bp(t, s);
    return t.value(lst_loss(t, bp, cfg, batch)).at(0);
  };
  auto grad_fn = [&](const std::vector<TensorD>& p) {
    ParamStoreD s = to_store(p);
    TapeD t;
    BoundParams<double> bp(t, s);
    t.backward(lst_loss(t, bp, cfg, batch));
    std::vector<TensorD> out;
    for (const auto& n : names) out.push_back(t.grad(bp.at(n)));
    return out;
  };
  GradCheckOptions opt;
  opt.samples_per_tensor = 3;
  opt.seed = 77;
  auto rep = grad_check(params, loss_fn, grad_fn, opt);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("freezing: adapter-only gradients check out; frozen groups get no grads") {
  ModelConfig cfg = tiny_config();
  ParamStoreF storef = init_params(cfg, 10);
  ParamStoreD store = storef.cast<double>();
  store.freeze(Group::frontend);
  store.freeze(Group::backend);

  std::vector<BatchItem<double>> batch(1);
  batch[0].frames = random_frames(6, cfg.d_frames, 37).cast<double>();
  batch[0].labels = {4, 5};

  const auto names = store.trainable_names();
  CHECK(names.size() == 6);  // exactly the adapter tensors
  std::vector<TensorD> params;
  for (const auto& n : names) params.push_back(store.at(n));

  auto to_store = [&](const std::vector<TensorD>& p) {
    ParamStoreD s = store;
    for (size_t i = 0; i < names.size(); ++i) s.at(names[i]) = p[i];
    return s;
  };
  auto rep = grad_check(
      params,
      [&](const std::vector<TensorD>& p) {
        ParamStoreD s = to_store(p);
        TapeD t;
        BoundParams<double> bp(t, s);
        return t.value(lst_loss(t, bp, cfg, batch)).at(0);
      },
      [&](const std::vector<TensorD>& p) {
        ParamStoreD s = to_store(p);
        TapeD t;
        BoundParams<double> bp(t, s);
        t.backward(lst_loss(t, bp, cfg, batch));
        std::vector<TensorD> out;
        for (const auto& n : names) out.push_back(t.grad(bp.at(n)));
        // frozen tensors are constants: asking for their gradient is an error
        CHECK_THROWS_AS(t.grad(bp.at("backend.embed")), UsageError);
        return out;
      },
      {1e-5, 4, 3});
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("loss positions cover exactly the labels plus EOS") {
  ModelConfig cfg = tiny_config();
  ParamStoreF store = init_params(cfg, 12);
  Rng rng(41);
  TensorF frames = TensorF::randn({11, cfg.d_frames}, rng);
  const std::vector<int32_t> labels = {4, 9, 5, 6};

  TapeF t;
  BoundParams<float> bp(t, store);
  std::vector<BatchItem<float>> batch(1);
  batch[0].frames = frames;
  batch[0].labels = labels;
  const double got = t.value(lst_loss(t, bp, cfg, batch)).at(0);

  // recompute by hand from the teacher-forced logits: positions P..P+L carry
  // the loss, predicting labels[0..L-1] then EOS
  const TensorF logits = teacher_logits(store, cfg, frames, labels);
  const int64_t p = prompt_len(11);
  REQUIRE(logits.rows() == p + 1 + static_cast<int64_t>(labels.size()));
  double manual = 0.0;
  for (size_t j = 0; j <= labels.size(); ++j) {
    const int64_t row = p + static_cast<int64_t>(j);
    const int32_t target = (j < labels.size()) ? labels[j] : Vocabulary::kEos;
    double mx = -1e300;
    for (int32_t v = 0; v < cfg.vocab_total; ++v)
      mx = std::max(mx, static_cast<double>(logits.at(row, v)));
    double sum = 0.0;
    for (int32_t v = 0; v < cfg.vocab_total; ++v)
      sum += std::exp(static_cast<double>(logits.at(row, v)) - mx);
    manual += mx + std::log(sum) - static_cast<double>(logits.at(row, target));
  }
  manual /= static_cast<double>(labels.size() + 1);
  CHECK(got == doctest::Approx(manual).epsilon(1e-5));
}
