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

#ifndef PCST_KERNELS_HPP
#define PCST_KERNELS_HPP

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pcst/error.hpp"

// Data-parallel kernels. The parallel versions split work across rows or
// segments; every output element is accumulated in ascending index order, so
// results are bitwise identical to the serial reference at any thread count.

namespace pcst {

// Variable-length sequences packed into one row block.
struct Segments {
  std::vector<int64_t> len;
  std::vector<int64_t> off;  // prefix offsets, size len.size() + 1

  static Segments from_lengths(const std::vector<int64_t>& lens) {
    Segments s;
    s.len = lens;
    s.off.resize(lens.size() + 1);
    s.off[0] = 0;
    for (size_t i = 0; i < lens.size(); ++i) s.off[i + 1] = s.off[i] + lens[i];
    return s;
  }

  int64_t count() const { return static_cast<int64_t>(len.size()); }
  int64_t total() const { return off.back(); }
};

namespace kern {

// Work below this many scalar ops stays on one thread.
constexpr int64_t kOmpGrain = 1 << 15;

inline bool use_omp(int64_t work) {
  return work >= kOmpGrain && omp_get_max_threads() > 1;
}

// ---------------------------------------------------------------------------
// Serial reference implementations, kept for testing and benchmarking.
// ---------------------------------------------------------------------------
namespace ref {

// c[m x n] = a[m x k] * b[k x n]; per-element accumulation in ascending k.
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  std::fill(c, c + m * n, T(0));
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (int64_t t = 0; t < k; ++t) {
      const T ait = arow[t];
      const T* brow = b + t * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += ait * brow[j];
    }
  }
}

// Same accumulation order as the reference, but four output rows share each
// streamed b row. Used by the parallel front end below.
template <typename T>
void matmul_nn_rows(const T* a, const T* b, T* c, int64_t i0, int64_t i1, int64_t k, int64_t n) {
  int64_t i = i0;
  for (; i + 4 <= i1; i += 4) {
    T* c0 = c + i * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    std::fill(c0, c0 + 4 * n, T(0));
    const T* a0 = a + i * k;
    for (int64_t t = 0; t < k; ++t) {
      const T v0 = a0[t];
      const T v1 = a0[k + t];
      const T v2 = a0[2 * k + t];
      const T v3 = a0[3 * k + t];
      const T* brow = b + t * n;
      for (int64_t j = 0; j < n; ++j) {
        const T bj = brow[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < i1; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    std::fill(crow, crow + n, T(0));
    for (int64_t t = 0; t < k; ++t) {
      const T ait = arow[t];
      const T* brow = b + t * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += ait * brow[j];
    }
  }
}

template <typename T>
void gelu_forward(const T* x, T* y, int64_t n) {
  const T c0 = T(0.7978845608028653558798921198687637);  // sqrt(2/pi)
  const T c1 = T(0.044715);
  for (int64_t i = 0; i < n; ++i) {
    const T v = x[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(c0 * (v + c1 * v * v * v)));
  }
}

// Row-wise softmax with max subtraction; accumulations in double.
template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t n) {
  for (int64_t i = 0; i < rows; ++i) {
    const T* xr = x + i * n;
    T* yr = y + i * n;
    double mx = static_cast<double>(xr[0]);
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(xr[j]));
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(xr[j]) - mx);
      yr[j] = static_cast<T>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < n; ++j) yr[j] = static_cast<T>(static_cast<double>(yr[j]) * inv);
  }
}

// Cross-correlation (no kernel flip), zero padding. Weights are laid out
// [K x Cin x Cout] so the inner output-channel loop is contiguous.
template <typename T>
void conv1d_forward(const T* x, const T* w, const T* b, T* y, int64_t len_in, int64_t cin,
                    int64_t cout, int64_t ksize, int64_t stride, int64_t pad) {
  const int64_t len_out = (len_in + 2 * pad - ksize) / stride + 1;
  for (int64_t to = 0; to < len_out; ++to) {
    T* yrow = y + to * cout;
    for (int64_t oc = 0; oc < cout; ++oc) yrow[oc] = b[oc];
    for (int64_t kk = 0; kk < ksize; ++kk) {
      const int64_t ti = to * stride + kk - pad;
      if (ti < 0 || ti >= len_in) continue;
      const T* xrow = x + ti * cin;
      for (int64_t ic = 0; ic < cin; ++ic) {
        const T xv = xrow[ic];
        const T* wrow = w + (kk * cin + ic) * cout;
        for (int64_t oc = 0; oc < cout; ++oc) yrow[oc] += xv * wrow[oc];
      }
    }
  }
}

// Scaled dot-product attention over one packed segment, all heads.
// q,k,v,out are [len x d] row blocks; probs is [heads x len x len].
template <typename T>
void attention_forward_seg(const T* q, const T* k, const T* v, T* out, T* probs, int64_t len,
                           int64_t d, int64_t heads, bool causal) {
  const int64_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> row(static_cast<size_t>(len));
  for (int64_t h = 0; h < heads; ++h) {
    const int64_t hoff = h * dh;
    T* p = probs + h * len * len;
    for (int64_t i = 0; i < len; ++i) {
      const int64_t jmax = causal ? i : len - 1;
      const T* qi = q + i * d + hoff;
      double mx = -1e300;
      for (int64_t j = 0; j <= jmax; ++j) {
        const T* kj = k + j * d + hoff;
        double s = 0.0;
        for (int64_t t = 0; t < dh; ++t)
          s += static_cast<double>(qi[t]) * static_cast<double>(kj[t]);
        s *= scale;
        row[static_cast<size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (int64_t j = 0; j <= jmax; ++j) {
        const double e = std::exp(row[static_cast<size_t>(j)] - mx);
        row[static_cast<size_t>(j)] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      T* prow = p + i * len;
      for (int64_t j = 0; j < len; ++j)
        prow[j] = (j <= jmax) ? static_cast<T>(row[static_cast<size_t>(j)] * inv) : T(0);
      T* orow = out + i * d + hoff;
      for (int64_t t = 0; t < dh; ++t) orow[t] = T(0);
      for (int64_t j = 0; j <= jmax; ++j) {
        const T pij = prow[j];
        const T* vj = v + j * d + hoff;
        for (int64_t t = 0; t < dh; ++t) orow[t] += pij * vj[t];
      }
    }
  }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// Parallel kernels.
// ---------------------------------------------------------------------------

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  if (m < 8) {
    ref::matmul_nn(a, b, c, m, k, n);
    return;
  }
  if (!use_omp(m * k * n)) {
    ref::matmul_nn_rows(a, b, c, 0, m, k, n);
    return;
  }
  const int64_t nthreads = omp_get_max_threads();
#pragma omp parallel num_threads(static_cast<int>(nthreads))
  {
    const int64_t tid = omp_get_thread_num();
    const int64_t chunk = (m + nthreads - 1) / nthreads;
    const int64_t i0 = std::min(m, tid * chunk);
    const int64_t i1 = std::min(m, i0 + chunk);
    if (i0 < i1) ref::matmul_nn_rows(a, b, c, i0, i1, k, n);
  }
}

// c[k x n] = a^T * b for a[m x k], b[m x n]; rank-1 updates in ascending m.
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  std::fill(c, c + k * n, T(0));
  int64_t t = 0;
  for (; t + 4 <= m; t += 4) {
    const T* a0 = a + t * k;
    const T* b0 = b + t * n;
    for (int64_t p = 0; p < k; ++p) {
      const T v0 = a0[p];
      const T v1 = a0[k + p];
      const T v2 = a0[2 * k + p];
      const T v3 = a0[3 * k + p];
      T* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) {
        T acc = crow[j];
        acc += v0 * b0[j];
        acc += v1 * b0[n + j];
        acc += v2 * b0[2 * n + j];
        acc += v3 * b0[3 * n + j];
        crow[j] = acc;
      }
    }
  }
  for (; t < m; ++t) {
    const T* arow = a + t * k;
    const T* brow = b + t * n;
    for (int64_t p = 0; p < k; ++p) {
      const T v = arow[p];
      T* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += v * brow[j];
    }
  }
}

template <typename T>
void transpose(const T* a, T* at, int64_t m, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) at[j * m + i] = a[i * n + j];
}

template <typename T>
void gelu_forward(const T* x, T* y, int64_t n) {
  if (!use_omp(n * 8)) {
    ref::gelu_forward(x, y, n);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const T c0 = T(0.7978845608028653558798921198687637);
    const T c1 = T(0.044715);
    const T v = x[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(c0 * (v + c1 * v * v * v)));
  }
}

// dx = dy * gelu'(x), elementwise.
template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, int64_t n) {
#pragma omp parallel for schedule(static) if (use_omp(n * 12))
  for (int64_t i = 0; i < n; ++i) {
    const double c0 = 0.7978845608028653558798921198687637;
    const double c1 = 0.044715;
    const double v = static_cast<double>(x[i]);
    const double u = c0 * (v + c1 * v * v * v);
    const double t = std::tanh(u);
    const double du = c0 * (1.0 + 3.0 * c1 * v * v);
    const double g = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
    dx[i] += static_cast<T>(static_cast<double>(dy[i]) * g);
  }
}

template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t n) {
  if (!use_omp(rows * n * 4) || rows < 2) {
    ref::softmax_rows(x, y, rows, n);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < rows; ++i) {
    ref::softmax_rows(x + i * n, y + i * n, 1, n);
  }
}

template <typename T>
void conv1d_forward(const T* x, const T* w, const T* b, T* y, const Segments& seg,
                    const Segments& seg_out, int64_t cin, int64_t cout, int64_t ksize,
                    int64_t stride, int64_t pad) {
  const int64_t nseg = seg.count();
  const int64_t work = seg.total() * ksize * cin * cout;
#pragma omp parallel for schedule(static) if (use_omp(work) && nseg > 1)
  for (int64_t s = 0; s < nseg; ++s) {
    ref::conv1d_forward(x + seg.off[s] * cin, w, b, y + seg_out.off[s] * cout, seg.len[s], cin,
                        cout, ksize, stride, pad);
  }
}

// Accumulates into dx, dw, db. dx is segment-disjoint and parallel; dw/db are
// shared accumulators and run serially in ascending segment order.
template <typename T>
void conv1d_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db,
                     const Segments& seg, const Segments& seg_out, int64_t cin, int64_t cout,
                     int64_t ksize, int64_t stride, int64_t pad) {
  const int64_t nseg = seg.count();
  const int64_t work = seg.total() * ksize * cin * cout;
#pragma omp parallel for schedule(static) if (use_omp(work) && nseg > 1)
  for (int64_t s = 0; s < nseg; ++s) {
    const T* dys = dy + seg_out.off[s] * cout;
    T* dxs = dx + seg.off[s] * cin;
    const int64_t len_in = seg.len[s];
    const int64_t len_out = seg_out.len[s];
    for (int64_t to = 0; to < len_out; ++to) {
      const T* dyrow = dys + to * cout;
      for (int64_t kk = 0; kk < ksize; ++kk) {
        const int64_t ti = to * stride + kk - pad;
        if (ti < 0 || ti >= len_in) continue;
        T* dxrow = dxs + ti * cin;
        for (int64_t ic = 0; ic < cin; ++ic) {
          const T* wrow = w + (kk * cin + ic) * cout;
          double acc = 0.0;
          for (int64_t oc = 0; oc < cout; ++oc)
            acc += static_cast<double>(dyrow[oc]) * static_cast<double>(wrow[oc]);
          dxrow[ic] += static_cast<T>(acc);
        }
      }
    }
  }
  for (int64_t s = 0; s < nseg; ++s) {
    const T* xs = x + seg.off[s] * cin;
    const T* dys = dy + seg_out.off[s] * cout;
    const int64_t len_in = seg.len[s];
    const int64_t len_out = seg_out.len[s];
    for (int64_t to = 0; to < len_out; ++to) {
      const T* dyrow = dys + to * cout;
      for (int64_t oc = 0; oc < cout; ++oc) db[oc] += dyrow[oc];
      for (int64_t kk = 0; kk < ksize; ++kk) {
        const int64_t ti = to * stride + kk - pad;
        if (ti < 0 || ti >= len_in) continue;
        const T* xrow = xs + ti * cin;
        for (int64_t ic = 0; ic < cin; ++ic) {
          const T xv = xrow[ic];
          T* dwrow = dw + (kk * cin + ic) * cout;
          for (int64_t oc = 0; oc < cout; ++oc) dwrow[oc] += xv * dyrow[oc];
        }
      }
    }
  }
}

// Packed multi-head attention. probs must hold sum_s heads*len_s^2 entries;
// prob_off[s] gives each segment's base offset into it.
template <typename T>
void attention_forward(const T* q, const T* k, const T* v, T* out, T* probs,
                       const std::vector<int64_t>& prob_off, const Segments& seg, int64_t d,
                       int64_t heads, bool causal) {
  const int64_t nseg = seg.count();
#pragma omp parallel for schedule(static) if (nseg > 1 && use_omp(seg.total() * d * 16))
  for (int64_t s = 0; s < nseg; ++s) {
    const int64_t o = seg.off[s] * d;
    ref::attention_forward_seg(q + o, k + o, v + o, out + o, probs + prob_off[s], seg.len[s], d,
                               heads, causal);
  }
}

template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq,
                        T* dk, T* dv, const std::vector<int64_t>& prob_off, const Segments& seg,
                        int64_t d, int64_t heads, bool causal) {
  const int64_t nseg = seg.count();
  const int64_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
#pragma omp parallel for schedule(static) if (nseg > 1 && use_omp(seg.total() * d * 32))
  for (int64_t s = 0; s < nseg; ++s) {
    const int64_t len = seg.len[s];
    const int64_t o = seg.off[s] * d;
    const T* qs = q + o;
    const T* ks = k + o;
    const T* vs = v + o;
    const T* dos_ = dout + o;
    T* dqs = dq + o;
    T* dks = dk + o;
    T* dvs = dv + o;
    std::vector<double> dp(static_cast<size_t>(len));
    for (int64_t h = 0; h < heads; ++h) {
      const int64_t hoff = h * dh;
      const T* p = probs + prob_off[s] + h * len * len;
      for (int64_t i = 0; i < len; ++i) {
        const int64_t jmax = causal ? i : len - 1;
        const T* prow = p + i * len;
        const T* drow = dos_ + i * d + hoff;
        // dv[j] += p[i][j] * dout[i]; dp[j] = dout[i] . v[j]
        double dot_pp = 0.0;
        for (int64_t j = 0; j <= jmax; ++j) {
          const T* vj = vs + j * d + hoff;
          T* dvj = dvs + j * d + hoff;
          const T pij = prow[j];
          double acc = 0.0;
          for (int64_t t = 0; t < dh; ++t) {
            dvj[t] += pij * drow[t];
            acc += static_cast<double>(drow[t]) * static_cast<double>(vj[t]);
          }
          dp[static_cast<size_t>(j)] = acc;
          dot_pp += acc * static_cast<double>(pij);
        }
        // ds = p .* (dp - sum(dp .* p)); dq[i] += scale * ds . k; dk += scale * ds * q[i]
        T* dqi = dqs + i * d + hoff;
        const T* qi = qs + i * d + hoff;
        for (int64_t j = 0; j <= jmax; ++j) {
          const double ds =
              static_cast<double>(prow[j]) * (dp[static_cast<size_t>(j)] - dot_pp) * scale;
          const T dsT = static_cast<T>(ds);
          const T* kj = ks + j * d + hoff;
          T* dkj = dks + j * d + hoff;
          for (int64_t t = 0; t < dh; ++t) {
            dqi[t] += dsT * kj[t];
            dkj[t] += dsT * qi[t];
          }
        }
      }
    }
  }
}

// y[i][j] = x[i][j] + b[j]
template <typename T>
void add_row_broadcast(const T* x, const T* b, T* y, int64_t rows, int64_t n) {
#pragma omp parallel for schedule(static) if (use_omp(rows * n) && rows > 1)
  for (int64_t i = 0; i < rows; ++i) {
    const T* xr = x + i * n;
    T* yr = y + i * n;
    for (int64_t j = 0; j < n; ++j) yr[j] = xr[j] + b[j];
  }
}

template <typename T>
void accumulate(T* dst, const T* src, int64_t n) {
#pragma omp parallel for schedule(static) if (use_omp(n))
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace kern
}  // namespace pcst

#endif  // PCST_KERNELS_HPP
