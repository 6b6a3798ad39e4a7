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

// Compares the serial reference kernels against the OpenMP versions: wall
// time plus a bitwise equality audit, since the parallel kernels promise
// identical results at any thread count.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>

#include "pcst/config.hpp"
#include "pcst/kernels.hpp"
#include "pcst/rng.hpp"
#include "pcst/tensor.hpp"

using namespace pcst;

namespace {

template <typename F>
double time_ms(F&& f, int iters) {
  f();  // warmup
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

TensorF randn(std::vector<int64_t> shape, Rng& rng) { return TensorF::randn(std::move(shape), rng); }

bool bitwise_equal(const TensorF& a, const TensorF& b) {
  return std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * 4) == 0;
}

void bench_matmul(Rng& rng) {
  struct Shape {
    int64_t m, k, n;
  };
  for (const Shape s : {Shape{1024, 128, 512}, Shape{1024, 512, 128}, Shape{2048, 64, 256}}) {
    TensorF a = randn({s.m, s.k}, rng);
    TensorF b = randn({s.k, s.n}, rng);
    TensorF c_ref({s.m, s.n}), c_par({s.m, s.n});
    const double t_ref =
        time_ms([&] { kern::ref::matmul_nn(a.data(), b.data(), c_ref.data(), s.m, s.k, s.n); }, 20);
    const double t_par =
        time_ms([&] { kern::matmul_nn(a.data(), b.data(), c_par.data(), s.m, s.k, s.n); }, 20);
    const double gflop = 2.0 * s.m * s.k * s.n / 1e9;
    std::printf("matmul %4lldx%3lldx%3lld  serial %7.2f ms (%5.1f GF/s)  parallel %7.2f ms "
                "(%5.1f GF/s)  speedup %.2fx  bitwise %s\n",
                (long long)s.m, (long long)s.k, (long long)s.n, t_ref, gflop / t_ref * 1e3, t_par,
                gflop / t_par * 1e3, t_ref / t_par, bitwise_equal(c_ref, c_par) ? "OK" : "FAIL");
  }
}

void bench_conv(Rng& rng) {
  const int64_t cin = 64, cout = 64, k = 5, stride = 2, pad = 2;
  std::vector<int64_t> lens(64, 24);
  Segments seg = Segments::from_lengths(lens);
  std::vector<int64_t> out_lens;
  for (int64_t l : lens) out_lens.push_back((l + 2 * pad - k) / stride + 1);
  Segments seg_out = Segments::from_lengths(out_lens);
  TensorF x = randn({seg.total(), cin}, rng);
  TensorF w = randn({k, cin, cout}, rng);
  TensorF b = randn({cout}, rng);
  TensorF y_ref({seg_out.total(), cout}), y_par({seg_out.total(), cout});
  const double t_ref = time_ms(
      [&] {
        for (int64_t s = 0; s < seg.count(); ++s) {
          kern::ref::conv1d_forward(x.data() + seg.off[s] * cin, w.data(), b.data(),
                                    y_ref.data() + seg_out.off[s] * cout, seg.len[s], cin, cout, k,
                                    stride, pad);
        }
      },
      20);
  const double t_par = time_ms(
      [&] {
        kern::conv1d_forward(x.data(), w.data(), b.data(), y_par.data(), seg, seg_out, cin, cout,
                             k, stride, pad);
      },
      20);
  std::printf("conv1d packed (64 segments)  serial %7.2f ms  parallel %7.2f ms  speedup %.2fx  "
              "bitwise %s\n",
              t_ref, t_par, t_ref / t_par, bitwise_equal(y_ref, y_par) ? "OK" : "FAIL");
}

void bench_attention(Rng& rng) {
  const int64_t d = 128, heads = 4;
  std::vector<int64_t> lens(64, 18);
  Segments seg = Segments::from_lengths(lens);
  std::vector<int64_t> prob_off(lens.size() + 1, 0);
  for (size_t s = 0; s < lens.size(); ++s)
    prob_off[s + 1] = prob_off[s] + heads * lens[s] * lens[s];
  TensorF q = randn({seg.total(), d}, rng);
  TensorF k = randn({seg.total(), d}, rng);
  TensorF v = randn({seg.total(), d}, rng);
  TensorF o_ref({seg.total(), d}), o_par({seg.total(), d});
  std::vector<float> probs(static_cast<size_t>(prob_off.back()));
  const double t_ref = time_ms(
      [&] {
        for (int64_t s = 0; s < seg.count(); ++s) {
          const int64_t o = seg.off[s] * d;
          kern::ref::attention_forward_seg(q.data() + o, k.data() + o, v.data() + o,
                                           o_ref.data() + o, probs.data() + prob_off[s],
                                           seg.len[s], d, heads, true);
        }
      },
      20);
  const double t_par = time_ms(
      [&] {
        kern::attention_forward(q.data(), k.data(), v.data(), o_par.data(), probs.data(), prob_off,
                                seg, d, heads, true);
      },
      20);
  std::printf("attention packed (64 segments)  serial %7.2f ms  parallel %7.2f ms  speedup %.2fx  "
              "bitwise %s\n",
              t_ref, t_par, t_ref / t_par, bitwise_equal(o_ref, o_par) ? "OK" : "FAIL");
}

}  // namespace

int main() {
  tune_runtime_allocator();
  std::printf("threads: %d\n", omp_get_max_threads());
  Rng rng(7);
  bench_matmul(rng);
  bench_conv(rng);
  bench_attention(rng);
  return 0;
}
