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
#include "pcst/tape.hpp"

using namespace pcst;

// ----- independent CTC oracle: enumerate every frame path -------------------

namespace {

std::vector<int32_t> collapse(const std::vector<int32_t>& path, int32_t blank) {
  std::vector<int32_t> out;
  for (size_t t = 0; t < path.size(); ++t) {
    if (path[t] == blank) continue;
    if (t > 0 && path[t] == path[t - 1]) continue;
    out.push_back(path[t]);
  }
  return out;
}

// Total probability over all (classes)^frames paths that collapse to target.
double brute_force_ctc_prob(const TensorD& lp, const std::vector<int32_t>& target) {
  const int64_t frames = lp.extent(0);
  const int64_t classes = lp.extent(1);
  const int32_t blank = static_cast<int32_t>(classes - 1);
  std::vector<int32_t> path(static_cast<size_t>(frames), 0);
  double total = 0.0;
  while (true) {
    if (collapse(path, blank) == target) {
      double logp = 0.0;
      for (int64_t t = 0; t < frames; ++t) logp += lp.at(t, path[static_cast<size_t>(t)]);
      total += std::exp(logp);
    }
    int64_t pos = frames - 1;
    while (pos >= 0 && path[static_cast<size_t>(pos)] == classes - 1) {
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<size_t>(pos)];
  }
  return total;
}

TensorD random_log_probs(int64_t frames, int64_t classes, Rng& rng) {
  TensorD logits({frames, classes});
  for (auto& v : logits.vec()) v = rng.uniform() * 4.0 - 2.0;
  TapeD t;
  return t.value(t.log_softmax(t.constant(logits)));
}

double tape_ctc(const TensorD& lp, const std::vector<int32_t>& target) {
  TapeD t;
  return t.value(t.ctc(t.constant(lp), target)).at(0);
}

}  // namespace

TEST_CASE("ctc hand cases") {
  // one frame, one label, uniform over {a, blank}
  TensorD lp1({1, 2}, {std::log(0.5), std::log(0.5)});
  CHECK(tape_ctc(lp1, {0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // two frames: paths {aa, -a, a-} of the 4 collapse to "a"
  TensorD lp2({2, 2}, {std::log(0.5), std::log(0.5), std::log(0.5), std::log(0.5)});
  CHECK(tape_ctc(lp2, {0}) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
  CHECK(tape_ctc(lp2, {0}) == doctest::Approx(0.2877).epsilon(1e-4));

  // "aa" needs a separating blank: at least 3 frames
  CHECK_THROWS_AS(tape_ctc(lp2, {0, 0}), InfeasibleAlignmentError);
  TensorD lp3 = lp2;
  CHECK_THROWS_AS(tape_ctc(lp3, {}), UsageError);
  CHECK_THROWS_AS(tape_ctc(lp2, {1}), IndexError);  // label = blank index
}

TEST_CASE("ctc matches brute-force enumeration for T<=6, V<=3, U<=3") {
  Rng rng(99);
  for (int64_t v = 1; v <= 3; ++v) {
    const int64_t classes = v + 1;
    for (int64_t frames = 1; frames <= 6; ++frames) {
      const TensorD lp = random_log_probs(frames, classes, rng);
      std::vector<std::vector<int32_t>> targets = {{}};
      for (int u = 0; u < 3; ++u) {
        std::vector<std::vector<int32_t>> next;
        for (const auto& base : targets) {
          for (int32_t c = 0; c < v; ++c) {
            auto t = base;
            t.push_back(c);
            next.push_back(std::move(t));
          }
        }
        for (const auto& target : next) {
          const double prob = brute_force_ctc_prob(lp, target);
          if (frames < ctc_min_frames(target)) {
            CHECK(prob == 0.0);
            CHECK_THROWS_AS(tape_ctc(lp, target), InfeasibleAlignmentError);
          } else {
            REQUIRE(prob > 0.0);
            REQUIRE(tape_ctc(lp, target) == doctest::Approx(-std::log(prob)).epsilon(1e-9));
          }
        }
        targets = std::move(next);
      }
    }
  }
}

TEST_CASE("ctc gradient check through log_softmax") {
  Rng rng(7);
  TensorD logits({5, 3});
  for (auto& v : logits.vec()) v = rng.uniform() * 2.0 - 1.0;
  auto build = [](TapeD& t, std::vector<TapeD::Ref>& p) {
    return t.ctc(t.log_softmax(p[0]), {0, 1});
  };
  GradCheckOptions opt;
  opt.samples_per_tensor = 0;
  auto rep = grad_check(
      {logits},
      [&](const std::vector<TensorD>& p) {
        TapeD t;
        std::vector<TapeD::Ref> refs = {t.input(p[0])};
        return t.value(build(t, refs)).at(0);
      },
      [&](const std::vector<TensorD>& p) {
        TapeD t;
        std::vector<TapeD::Ref> refs = {t.input(p[0])};
        t.backward(build(t, refs));
        return std::vector<TensorD>{t.grad(refs[0])};
      },
      opt);
  CHECK(rep.max_rel_err < 1e-6);
}

// ----- convolution -----------------------------------------------------------

TEST_CASE("conv1d length law and hand case") {
  TapeD t;
  // direct convolution by hand: (k3,s1,p1), kernel of ones
  auto x = t.constant(TensorD({3, 1}, {1, 2, 3}));
  auto w = t.constant(TensorD({3, 1, 1}, {1, 1, 1}));
  auto b = t.constant(TensorD({1}));
  auto y = t.conv1d(x, w, b, Segments::from_lengths({3}), 1, 1);
  CHECK(t.value(y).at(0) == 3.0);
  CHECK(t.value(y).at(1) == 6.0);
  CHECK(t.value(y).at(2) == 5.0);

  // (5,2,2) halves length, rounding up
  CHECK(conv_out_len(7) == 4);
  CHECK(conv_out_len(100) == 50);
  for (int64_t l = 1; l <= 512; ++l) {
    CHECK(conv_out_len(l) == (l + 1) / 2);
  }

  // channel mismatch names the problem
  auto w2 = t.constant(TensorD({3, 2, 1}));
  CHECK_THROWS_AS(t.conv1d(x, w2, b, Segments::from_lengths({3}), 1, 1), DimensionError);
}

TEST_CASE("conv1d output length matches the formula on real tensors") {
  Rng rng(5);
  std::vector<int64_t> lens;
  for (int64_t l = 1; l <= 64; ++l) lens.push_back(l);
  Segments seg = Segments::from_lengths(lens);
  TapeF t;
  auto x = t.constant(TensorF::randn({seg.total(), 4}, rng));
  auto w = t.constant(TensorF::randn({5, 4, 4}, rng));
  auto b = t.constant(TensorF({4}));
  auto y = t.conv1d(x, w, b, seg, 2, 2);
  int64_t expect = 0;
  for (int64_t l : lens) expect += (l + 2 * 2 - 5) / 2 + 1;
  CHECK(t.value(y).rows() == expect);
}

// ----- attention ---------------------------------------------------------------

TEST_CASE("attention single position returns v exactly") {
  Rng rng(3);
  TapeF t;
  TensorF v = TensorF::randn({1, 8}, rng);
  auto out = t.attention(t.constant(TensorF::randn({1, 8}, rng)),
                         t.constant(TensorF::randn({1, 8}, rng)), t.constant(v),
                         Segments::from_lengths({1}), 2, true);
  for (int64_t j = 0; j < 8; ++j) CHECK(t.value(out).at(j) == v.at(j));
}

TEST_CASE("attention equal scores average the values") {
  TapeD t;
  // q.k identical for both positions -> softmax 0.5/0.5 at position 2
  TensorD q({2, 2}, {1.0, 0.0, 1.0, 0.0});
  TensorD k({2, 2}, {1.0, 0.0, 1.0, 0.0});
  TensorD v({2, 2}, {2.0, 4.0, 6.0, 8.0});
  auto out = t.attention(t.constant(q), t.constant(k), t.constant(v),
                         Segments::from_lengths({2}), 1, true);
  CHECK(t.value(out).at(1, 0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(t.value(out).at(1, 1) == doctest::Approx(6.0).epsilon(1e-12));

  TensorD bad({2, 3});
  CHECK_THROWS_AS(t.attention(t.constant(bad), t.constant(bad), t.constant(bad),
                              Segments::from_lengths({2}), 2, true),
                  ConfigError);
}

TEST_CASE("causal attention ignores later positions bitwise") {
  Rng rng(8);
  Segments seg = Segments::from_lengths({6});
  TensorF q = TensorF::randn({6, 8}, rng);
  TensorF k = TensorF::randn({6, 8}, rng);
  TensorF v = TensorF::randn({6, 8}, rng);
  TapeF t1;
  auto out1 = t1.attention(t1.constant(q), t1.constant(k), t1.constant(v), seg, 2, true);
  // perturb position 4 in q, k and v
  for (int64_t j = 0; j < 8; ++j) {
    q.at(4, j) += 1.5f;
    k.at(4, j) -= 2.5f;
    v.at(4, j) += 0.5f;
  }
  TapeF t2;
  auto out2 = t2.attention(t2.constant(q), t2.constant(k), t2.constant(v), seg, 2, true);
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t j = 0; j < 8; ++j) {
      REQUIRE(t1.value(out1).at(i, j) == t2.value(out2).at(i, j));
    }
  }
}

// ----- losses -------------------------------------------------------------------

TEST_CASE("cross entropy values and masking") {
  TapeD t;
  auto logits = t.constant(TensorD({1, 4}));
  auto loss = t.cross_entropy(logits, {2}, {1});
  CHECK(t.value(loss).at(0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  TensorD spiked({1, 4});
  spiked.at(0, 1) = 30.0;
  auto loss2 = t.cross_entropy(t.constant(spiked), {1}, {1});
  CHECK(t.value(loss2).at(0) == doctest::Approx(0.0).epsilon(1e-9));

  // masked-out rows cannot influence the loss
  Rng rng(12);
  TensorD a({3, 5});
  for (auto& x : a.vec()) x = rng.uniform();
  TensorD b = a;
  b.at(1, 0) = 99.0;
  b.at(2, 3) = -99.0;
  TapeD t2;
  auto l1 = t2.cross_entropy(t2.constant(a), {1, 0, 0}, {1, 0, 0});
  auto l2 = t2.cross_entropy(t2.constant(b), {1, 0, 0}, {1, 0, 0});
  CHECK(t2.value(l1).at(0) == t2.value(l2).at(0));

  CHECK_THROWS_AS(t.cross_entropy(logits, {0}, {0}), UsageError);
  CHECK_THROWS_AS(t.cross_entropy(logits, {4}, {1}), IndexError);
}

TEST_CASE("losses are non-negative") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    TapeD t;
    TensorD logits({4, 6});
    for (auto& v : logits.vec()) v = rng.uniform() * 10.0 - 5.0;
    auto ce = t.cross_entropy(t.constant(logits), {0, 1, 2, 3}, {1, 1, 1, 1});
    CHECK(t.value(ce).at(0) >= 0.0);
    const TensorD lp = random_log_probs(4, 3, rng);
    CHECK(tape_ctc(lp, {0, 1}) >= 0.0);
  }
}

TEST_CASE("masked reconstruction loss contract") {
  TapeD t;
  Rng rng(31);
  TensorD frames({4, 3});
  for (auto& v : frames.vec()) v = rng.uniform() * 2.0 - 1.0;
  // perfect reconstruction
  auto perfect = t.mse_masked(t.constant(frames), frames, {1, 1, 0, 1});
  CHECK(t.value(perfect).at(0) == 0.0);
  // zero predictions: loss is the mean squared frame value over masked rows
  double expect = 0.0;
  for (int64_t i : {0LL, 1LL}) {
    for (int64_t j = 0; j < 3; ++j) expect += frames.at(i, j) * frames.at(i, j);
  }
  expect /= (2 * 3);
  auto zeros = t.mse_masked(t.constant(TensorD({4, 3})), frames, {1, 1, 0, 0});
  CHECK(t.value(zeros).at(0) == doctest::Approx(expect).epsilon(1e-12));
  // unmasked targets are irrelevant
  TensorD frames2 = frames;
  frames2.at(2, 0) = 123.0;
  auto l1 = t.mse_masked(t.constant(TensorD({4, 3})), frames, {1, 1, 0, 0});
  auto l2 = t.mse_masked(t.constant(TensorD({4, 3})), frames2, {1, 1, 0, 0});
  CHECK(t.value(l1).at(0) == t.value(l2).at(0));
  CHECK_THROWS_AS(t.mse_masked(t.constant(frames), frames, {0, 0, 0, 0}), UsageError);
}

TEST_CASE("loss gradient checks stay under 1e-6") {
  Rng rng(41);
  auto u = [&](std::vector<int64_t> shape) {
    TensorD t(shape);
    for (auto& v : t.vec()) v = rng.uniform() * 2.0 - 1.0;
    return t;
  };
  GradCheckOptions opt;
  opt.samples_per_tensor = 0;

  auto run = [&](std::vector<TensorD> params,
                 std::function<TapeD::Ref(TapeD&, std::vector<TapeD::Ref>&)> build) {
    auto rep = grad_check(
        std::move(params),
        [&](const std::vector<TensorD>& p) {
          TapeD t;
          std::vector<TapeD::Ref> refs;
          for (const auto& x : p) refs.push_back(t.input(x));
          return t.value(build(t, refs)).at(0);
        },
        [&](const std::vector<TensorD>& p) {
          TapeD t;
          std::vector<TapeD::Ref> refs;
          for (const auto& x : p) refs.push_back(t.input(x));
          t.backward(build(t, refs));
          std::vector<TensorD> out;
          for (auto r : refs) out.push_back(t.grad(r));
          return out;
        },
        opt);
    return rep.max_rel_err;
  };

  CHECK(run({u({3, 5})}, [](TapeD& t, std::vector<TapeD::Ref>& p) {
          return t.cross_entropy(p[0], {1, 0, 4}, {1, 0, 1});
        }) < 1e-6);
  const TensorD target = u({4, 3});
  CHECK(run({u({4, 3})}, [&](TapeD& t, std::vector<TapeD::Ref>& p) {
          return t.mse_masked(p[0], target, {1, 0, 1, 1});
        }) < 1e-6);
  CHECK(run({u({6, 4})}, [](TapeD& t, std::vector<TapeD::Ref>& p) {
          Segments seg = Segments::from_lengths({4, 2});
          return t.ctc_packed(t.log_softmax(p[0]), seg, {{0, 1}, {2}}, true);
        }) < 1e-6);
}
