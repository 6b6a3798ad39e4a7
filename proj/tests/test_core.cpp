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
#include "pcst/tape.hpp"

using namespace pcst;

TEST_CASE("tensor shape and invariants") {
  TensorF t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_THROWS_AS(TensorF({2, 0}), DimensionError);
  CHECK_THROWS_AS(TensorF({2, 2}, {1.f, 2.f, 3.f}), DimensionError);
  t.at(0, 0) = std::numeric_limits<float>::infinity();
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.check_finite("t"), NumericError);
}

TEST_CASE("matmul identity and hand case") {
  TapeD t;
  auto a = t.input(TensorD({2, 2}, {1, 2, 3, 4}));
  auto i = t.constant(TensorD::identity(2));
  auto c = t.matmul(a, i);
  for (int64_t k = 0; k < 4; ++k) CHECK(t.value(c).at(k) == t.value(a).at(k));

  auto b = t.constant(TensorD({2, 1}, {5, 6}));
  auto d = t.matmul(a, b);
  CHECK(t.value(d).at(0) == doctest::Approx(17).epsilon(1e-12));
  CHECK(t.value(d).at(1) == doctest::Approx(39).epsilon(1e-12));

  auto bad = t.constant(TensorD({2, 2}));
  auto wide = t.constant(TensorD({2, 3}));
  CHECK_THROWS_AS(t.matmul(wide, bad), DimensionError);
  CHECK_THROWS_WITH_AS(t.matmul(wide, bad), doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("elementwise ops and gelu values") {
  TapeD t;
  auto x = t.input(TensorD({3}, {-1.0, 0.0, 2.0}));
  auto zero = t.constant(TensorD({3}));
  auto same = t.add(x, zero);
  for (int64_t i = 0; i < 3; ++i) CHECK(t.value(same).at(i) == t.value(x).at(i));

  auto g = t.gelu(t.constant(TensorD({2}, {0.0, 1.0})));
  CHECK(t.value(g).at(0) == 0.0);
  // independent evaluation of the tanh approximation
  const double c0 = std::sqrt(2.0 / 3.14159265358979323846);
  const double expect = 0.5 * (1.0 + std::tanh(c0 * (1.0 + 0.044715)));
  CHECK(t.value(g).at(1) == doctest::Approx(expect).epsilon(1e-15));
  CHECK(t.value(g).at(1) == doctest::Approx(0.8412).epsilon(1e-4));

  auto y = t.constant(TensorD({2}, {1, 2}));
  CHECK_THROWS_AS(t.add(x, y), DimensionError);
}

TEST_CASE("softmax rows") {
  TapeD t;
  auto s1 = t.softmax(t.constant(TensorD({1, 2}, {0.0, 0.0})));
  CHECK(t.value(s1).at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.value(s1).at(1) == doctest::Approx(0.5).epsilon(1e-12));

  auto s2 = t.softmax(t.constant(TensorD({1, 2}, {0.0, std::log(3.0)})));
  CHECK(t.value(s2).at(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t.value(s2).at(1) == doctest::Approx(0.75).epsilon(1e-12));

  auto s3 = t.softmax(t.constant(TensorD({1, 2}, {1000.0, 0.0})));
  CHECK(t.value(s3).all_finite());
  CHECK(t.value(s3).at(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(t.value(s3).at(1) == doctest::Approx(0.0).epsilon(1e-9));

  // rows sum to one for magnitudes up to 1e3
  Rng rng(7);
  TensorD big({16, 9});
  for (auto& v : big.vec()) v = rng.uniform() * 2000.0 - 1000.0;
  auto s4 = t.softmax(t.constant(big));
  for (int64_t i = 0; i < 16; ++i) {
    double sum = 0.0;
    for (int64_t j = 0; j < 9; ++j) sum += t.value(s4).at(i, j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("gather rows, scatter backward and adjointness") {
  TapeD t;
  auto table = t.input(TensorD({5, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14}));
  auto one = t.gather_rows(table, {0});
  for (int64_t j = 0; j < 3; ++j) CHECK(t.value(one).at(j) == t.value(table).at(0, j));

  auto twice = t.gather_rows(table, {2, 2});
  auto loss = t.sum(twice);
  t.backward(loss);
  CHECK(t.grad(table).at(2, 0) == 2.0);
  CHECK(t.grad(table).at(2, 1) == 2.0);
  CHECK(t.grad(table).at(1, 0) == 0.0);

  CHECK_THROWS_AS(t.gather_rows(table, {5}), IndexError);
  CHECK_THROWS_WITH_AS(t.gather_rows(table, {5}), doctest::Contains("5"), IndexError);

  // adjointness: gather after a one-hot scatter reproduces the perturbation
  TapeD t2;
  auto tab = t2.input(TensorD({4, 2}));
  auto g = t2.gather_rows(tab, {3});
  auto s = t2.sum(g);
  t2.backward(s);
  // the gradient is one-hot on row 3; gathering row 3 of it gives all ones
  for (int64_t j = 0; j < 2; ++j) CHECK(t2.grad(tab).at(3, j) == 1.0);
  for (int64_t j = 0; j < 2; ++j) CHECK(t2.grad(tab).at(0, j) == 0.0);
}

TEST_CASE("backward basics") {
  TapeD t;
  auto x = t.input(TensorD({3}, {1, 2, 3}));
  auto unused = t.input(TensorD({2}, {5, 5}));
  auto y = t.sum(t.mul(x, x));
  CHECK(t.value(y).at(0) == doctest::Approx(14.0));
  t.backward(y);
  CHECK(t.grad(x).at(0) == doctest::Approx(2.0));
  CHECK(t.grad(x).at(1) == doctest::Approx(4.0));
  CHECK(t.grad(x).at(2) == doctest::Approx(6.0));
  // unused parameter gets a zero gradient tensor of its own shape
  CHECK(t.grad(unused).numel() == 2);
  CHECK(t.grad(unused).at(0) == 0.0);

  auto ones_root = t.sum(x);
  t.backward(ones_root);
  for (int64_t i = 0; i < 3; ++i) CHECK(t.grad(x).at(i) == 1.0);

  CHECK_THROWS_AS(t.backward(x), UsageError);  // non-scalar root
}

TEST_CASE("backward is bitwise deterministic") {
  Rng rng(11);
  TapeF t;
  auto a = t.input(TensorF::randn({8, 8}, rng));
  auto b = t.input(TensorF::randn({8, 8}, rng));
  auto y = t.sum(t.gelu(t.matmul(a, b)));
  t.backward(y);
  std::vector<float> first(t.grad(a).vec().begin(), t.grad(a).vec().end());
  t.backward(y);
  for (size_t i = 0; i < first.size(); ++i) CHECK(t.grad(a).vec()[i] == first[i]);
}

TEST_CASE("grad_check on quadratic loss") {
  Rng rng(3);
  std::vector<TensorD> params = {TensorD::randn({6}, rng)};
  auto loss = [](const std::vector<TensorD>& p) {
    double s = 0.0;
    for (int64_t i = 0; i < p[0].numel(); ++i) s += p[0].at(i) * p[0].at(i);
    return s;
  };
  auto grad = [](const std::vector<TensorD>& p) {
    std::vector<TensorD> g = {TensorD(p[0].shape())};
    for (int64_t i = 0; i < p[0].numel(); ++i) g[0].at(i) = 2.0 * p[0].at(i);
    return g;
  };
  GradCheckOptions opt;
  opt.samples_per_tensor = 0;
  auto rep = grad_check(params, loss, grad, opt);
  CHECK(rep.max_rel_err < 1e-8);

  GradCheckOptions bad;
  bad.eps = 0.0;
  CHECK_THROWS_AS(grad_check(params, loss, grad, bad), UsageError);
}

// grad_check wired through the tape for each registered primitive
namespace {

double tape_loss(const std::vector<TensorD>& params,
                 const std::function<Tape<double>::Ref(TapeD&, std::vector<Tape<double>::Ref>&)>& build) {
  TapeD t;
  std::vector<Tape<double>::Ref> refs;
  for (const auto& p : params) refs.push_back(t.input(p));
  return t.value(build(t, refs)).at(0);
}

std::vector<TensorD> tape_grad(
    const std::vector<TensorD>& params,
    const std::function<Tape<double>::Ref(TapeD&, std::vector<Tape<double>::Ref>&)>& build) {
  TapeD t;
  std::vector<Tape<double>::Ref> refs;
  for (const auto& p : params) refs.push_back(t.input(p));
  t.backward(build(t, refs));
  std::vector<TensorD> out;
  for (auto r : refs) out.push_back(t.grad(r));
  return out;
}

double check_primitive(
    std::vector<TensorD> params,
    std::function<Tape<double>::Ref(TapeD&, std::vector<Tape<double>::Ref>&)> build) {
  GradCheckOptions opt;
  opt.samples_per_tensor = 0;
  auto rep = grad_check(
      std::move(params), [&](const std::vector<TensorD>& p) { return tape_loss(p, build); },
      [&](const std::vector<TensorD>& p) { return tape_grad(p, build); }, opt);
  return rep.max_rel_err;
}

}  // namespace

TEST_CASE("per-primitive gradient checks stay under 1e-6") {
  Rng rng(17);
  auto u = [&](std::vector<int64_t> shape) {
    TensorD t(shape);
    for (auto& v : t.vec()) v = rng.uniform() * 2.0 - 1.0;
    return t;
  };
  using R = Tape<double>::Ref;

  CHECK(check_primitive({u({3, 4}), u({4, 2})}, [](TapeD& t, std::vector<R>& p) {
          return t.sum(t.matmul(p[0], p[1]));
        }) < 1e-6);
  CHECK(check_primitive({u({3, 4}), u({5, 4})}, [](TapeD& t, std::vector<R>& p) {
          return t.sum(t.gelu(t.matmul_nt(p[0], p[1])));
        }) < 1e-6);
  CHECK(check_primitive({u({4, 4}), u({4, 4})}, [](TapeD& t, std::vector<R>& p) {
          return t.sum(t.mul(t.sub(p[0], p[1]), t.add(p[0], p[1])));
        }) < 1e-6);
  CHECK(check_primitive({u({2, 5})}, [](TapeD& t, std::vector<R>& p) {
          return t.sum(t.mul(t.softmax(p[0]), p[0]));
        }) < 1e-6);
  CHECK(check_primitive({u({2, 5})}, [](TapeD& t, std::vector<R>& p) {
          return t.sum(t.mul(t.log_softmax(p[0]), p[0]));
        }) < 1e-6);
  CHECK(check_primitive({u({4, 3})}, [](TapeD& t, std::vector<R>& p) {
          return t.sum(t.gelu(t.gather_rows(p[0], {1, 3, 3, 0})));
        }) < 1e-6);
  CHECK(check_primitive({u({6}), u({6})}, [](TapeD& t, std::vector<R>& p) {
          return t.mean(t.mul(t.scale(p[0], 1.7), t.add_scalar(p[1], 0.3)));
        }) < 1e-6);
  CHECK(check_primitive({u({3, 6}), u({6}), u({6})}, [](TapeD& t, std::vector<R>& p) {
          return t.sum(t.mul(t.layer_norm(p[0], p[1], p[2]), p[0]));
        }) < 1e-6);
  CHECK(check_primitive({u({5, 4}), u({4})}, [](TapeD& t, std::vector<R>& p) {
          return t.sum(t.gelu(t.add_bias_rows(p[0], p[1])));
        }) < 1e-6);
  // attention, both masks, multi-segment
  for (bool causal : {true, false}) {
    CHECK(check_primitive({u({7, 8}), u({7, 8}), u({7, 8})}, [causal](TapeD& t, std::vector<R>& p) {
            Segments seg = Segments::from_lengths({3, 4});
            return t.sum(t.mul(t.attention(p[0], p[1], p[2], seg, 2, causal), p[0]));
          }) < 1e-6);
  }
  // conv over packed segments
  CHECK(check_primitive({u({9, 3}), u({5, 3, 2}), u({2})}, [](TapeD& t, std::vector<R>& p) {
          Segments seg = Segments::from_lengths({5, 4});
          return t.sum(t.gelu(t.conv1d(p[0], p[1], p[2], seg, 2, 2)));
        }) < 1e-6);
  // concat + posenc
  CHECK(check_primitive({u({4, 3}), u({5, 3})}, [](TapeD& t, std::vector<R>& p) {
          Segments sa = Segments::from_lengths({2, 2});
          Segments sb = Segments::from_lengths({3, 2});
          auto c = t.concat_rows(p[0], p[1], sa, sb);
          Segments sc = Segments::from_lengths({5, 4});
          return t.sum(t.gelu(t.add_posenc(c, sc)));
        }) < 1e-6);
}

TEST_CASE("graph topological order invariant") {
  TapeD t;
  auto a = t.input(TensorD({2}, {1, 2}));
  auto b = t.add(a, a);
  auto c = t.mul(b, a);
  CHECK(t.inputs_of(c)[0] < c.id);
  CHECK(t.inputs_of(c)[1] < c.id);
  CHECK(t.inputs_of(b)[0] < b.id);
}
