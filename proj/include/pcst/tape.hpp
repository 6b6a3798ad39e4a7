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

#ifndef PCST_TAPE_HPP
#define PCST_TAPE_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pcst/ctc.hpp"
#include "pcst/kernels.hpp"
#include "pcst/tensor.hpp"

namespace pcst {

// Reverse-mode autodiff over an append-only operation tape. Graph building
// and backward are single-threaded per tape; the kernels inside individual
// ops may fan out across threads without changing results bitwise.
template <typename T>
class Tape {
 public:
  struct Ref {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
  };

  // ----- leaves ------------------------------------------------------------

  Ref input(Tensor<T> v, bool requires_grad = true) {
    return push(std::move(v), requires_grad, {}, nullptr);
  }

  Ref constant(Tensor<T> v) { return push(std::move(v), false, {}, nullptr); }

  // ----- core primitives ---------------------------------------------------

  // c[i][j] = sum_k a[i][k] * b[k][j], ascending-k accumulation.
  Ref matmul(Ref a, Ref b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0)) {
      throw DimensionError("matmul: incompatible shapes " + av.shape_str() + " and " +
                           bv.shape_str());
    }
    const int64_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    Tensor<T> c = Tensor<T>::uninit({m, n});
    kern::matmul_nn(av.data(), bv.data(), c.data(), m, k, n);
    return push(std::move(c), needs_grad(a) || needs_grad(b), {a.id, b.id}, [=](Tape& t) {
      const Tensor<T>& dc = t.node(t.top_).grad;
      const Tensor<T>& A = t.val(a);
      const Tensor<T>& B = t.val(b);
      if (t.needs_grad(a)) {
        Tensor<T> bt = Tensor<T>::uninit({n, k});
        kern::transpose(B.data(), bt.data(), k, n);
        Tensor<T> da = Tensor<T>::uninit({m, k});
        kern::matmul_nn(dc.data(), bt.data(), da.data(), m, n, k);
        kern::accumulate(t.grad_of(a).data(), da.data(), m * k);
      }
      if (t.needs_grad(b)) {
        Tensor<T> db = Tensor<T>::uninit({k, n});
        kern::matmul_tn(A.data(), dc.data(), db.data(), m, k, n);
        kern::accumulate(t.grad_of(b).data(), db.data(), k * n);
      }
    });
  }

  // c = a * b^T with a[m x k], b[n x k]; used for the weight-tied head.
  Ref matmul_nt(Ref a, Ref b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(1)) {
      throw DimensionError("matmul_nt: incompatible shapes " + av.shape_str() + " and " +
                           bv.shape_str());
    }
    const int64_t m = av.extent(0), k = av.extent(1), n = bv.extent(0);
    Tensor<T> bt = Tensor<T>::uninit({k, n});
    kern::transpose(bv.data(), bt.data(), n, k);
    Tensor<T> c = Tensor<T>::uninit({m, n});
    kern::matmul_nn(av.data(), bt.data(), c.data(), m, k, n);
    return push(std::move(c), needs_grad(a) || needs_grad(b), {a.id, b.id}, [=](Tape& t) {
      const Tensor<T>& dc = t.node(t.top_).grad;
      const Tensor<T>& A = t.val(a);
      const Tensor<T>& B = t.val(b);
      if (t.needs_grad(a)) {  // da = dc * B
        Tensor<T> da = Tensor<T>::uninit({m, k});
        kern::matmul_nn(dc.data(), B.data(), da.data(), m, n, k);
        kern::accumulate(t.grad_of(a).data(), da.data(), m * k);
      }
      if (t.needs_grad(b)) {  // db = dc^T * A
        Tensor<T> db = Tensor<T>::uninit({n, k});
        kern::matmul_tn(dc.data(), A.data(), db.data(), m, n, k);
        kern::accumulate(t.grad_of(b).data(), db.data(), n * k);
      }
    });
  }

  Ref add(Ref a, Ref b) { return ew2(a, b, "add"); }
  Ref sub(Ref a, Ref b) { return ew2(a, b, "sub"); }
  Ref mul(Ref a, Ref b) { return ew2(a, b, "mul"); }

  Ref scale(Ref a, T s) {
    const auto& av = val(a);
    Tensor<T> c = av;
    for (auto& x : c.vec()) x *= s;
    return push(std::move(c), needs_grad(a), {a.id}, [=](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& dc = t.node(t.top_).grad;
      Tensor<T>& da = t.grad_of(a);
      for (int64_t i = 0; i < dc.numel(); ++i) da.at(i) += s * dc.at(i);
    });
  }

  Ref add_scalar(Ref a, T s) {
    Tensor<T> c = val(a);
    for (auto& x : c.vec()) x += s;
    return push(std::move(c), needs_grad(a), {a.id}, [=](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& dc = t.node(t.top_).grad;
      kern::accumulate(t.grad_of(a).data(), dc.data(), dc.numel());
    });
  }

  // tanh-approximation gelu (constant 0.044715).
  Ref gelu(Ref a) {
    const auto& av = val(a);
    Tensor<T> c = Tensor<T>::uninit(av.shape());
    kern::gelu_forward(av.data(), c.data(), av.numel());
    return push(std::move(c), needs_grad(a), {a.id}, [=](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& dc = t.node(t.top_).grad;
      kern::gelu_backward(t.val(a).data(), dc.data(), t.grad_of(a).data(), dc.numel());
    });
  }

  // Softmax along the last axis, max-subtracted.
  Ref softmax(Ref a) {
    const auto& av = val(a);
    if (av.rank() < 1) throw DimensionError("softmax: needs at least one axis");
    const int64_t n = av.extent(av.rank() - 1);
    const int64_t rows = av.numel() / n;
    Tensor<T> c = Tensor<T>::uninit(av.shape());
    kern::softmax_rows(av.data(), c.data(), rows, n);
    return push(std::move(c), needs_grad(a), {a.id}, [=](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& y = t.node(t.top_).value;
      const Tensor<T>& dy = t.node(t.top_).grad;
      Tensor<T>& dx = t.grad_of(a);
      for (int64_t i = 0; i < rows; ++i) {
        const T* yr = y.data() + i * n;
        const T* dyr = dy.data() + i * n;
        T* dxr = dx.data() + i * n;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j)
          dot += static_cast<double>(dyr[j]) * static_cast<double>(yr[j]);
        for (int64_t j = 0; j < n; ++j)
          dxr[j] += static_cast<T>(static_cast<double>(yr[j]) *
                                   (static_cast<double>(dyr[j]) - dot));
      }
    });
  }

  // Log-softmax along the last axis.
  Ref log_softmax(Ref a) {
    const auto& av = val(a);
    const int64_t n = av.extent(av.rank() - 1);
    const int64_t rows = av.numel() / n;
    Tensor<T> c = Tensor<T>::uninit(av.shape());
    for (int64_t i = 0; i < rows; ++i) {
      const T* xr = av.data() + i * n;
      T* yr = c.data() + i * n;
      double mx = static_cast<double>(xr[0]);
      for (int64_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(xr[j]));
      double sum = 0.0;
      for (int64_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(xr[j]) - mx);
      const double lse = mx + std::log(sum);
      for (int64_t j = 0; j < n; ++j) yr[j] = static_cast<T>(static_cast<double>(xr[j]) - lse);
    }
    return push(std::move(c), needs_grad(a), {a.id}, [=](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<T>& y = t.node(t.top_).value;
      const Tensor<T>& dy = t.node(t.top_).grad;
      Tensor<T>& dx = t.grad_of(a);
      for (int64_t i = 0; i < rows; ++i) {
        const T* yr = y.data() + i * n;
        const T* dyr = dy.data() + i * n;
        T* dxr = dx.data() + i * n;
        double dsum = 0.0;
        for (int64_t j = 0; j < n; ++j) dsum += static_cast<double>(dyr[j]);
        for (int64_t j = 0; j < n; ++j)
          dxr[j] += static_cast<T>(static_cast<double>(dyr[j]) -
                                   std::exp(static_cast<double>(yr[j])) * dsum);
      }
    });
  }

  // out[i] = table[ids[i]]; backward scatter-adds in ascending i.
  Ref gather_rows(Ref table, std::vector<int32_t> ids) {
    const auto& tv = val(table);
    if (tv.rank() != 2) throw DimensionError("gather_rows: table must be 2-D, got " + tv.shape_str());
    const int64_t v = tv.extent(0), d = tv.extent(1);
    for (int32_t id : ids) {
      if (id < 0 || id >= v) {
        throw IndexError("gather_rows: id " + std::to_string(id) + " out of range for table with " +
                         std::to_string(v) + " rows");
      }
    }
    const int64_t l = static_cast<int64_t>(ids.size());
    if (l == 0) throw UsageError("gather_rows: empty id list");
    Tensor<T> c = Tensor<T>::uninit({l, d});
    for (int64_t i = 0; i < l; ++i) {
      const T* src = tv.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d;
      std::copy(src, src + d, c.data() + i * d);
    }
    auto ids_p = std::make_shared<std::vector<int32_t>>(std::move(ids));
    return push(std::move(c), needs_grad(table), {table.id}, [=](Tape& t) {
      if (!t.needs_grad(table)) return;
      const Tensor<T>& dc = t.node(t.top_).grad;
      Tensor<T>& dt = t.grad_of(table);
      for (int64_t i = 0; i < l; ++i) {
        const T* src = dc.data() + i * d;
        T* dst = dt.data() + static_cast<int64_t>((*ids_p)[static_cast<size_t>(i)]) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }

  Ref sum(Ref a) {
    const auto& av = val(a);
    double s = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) s += static_cast<double>(av.at(i));
    Tensor<T> c({1});
    c.at(0) = static_cast<T>(s);
    return push(std::move(c), needs_grad(a), {a.id}, [=](Tape& t) {
      if (!t.needs_grad(a)) return;
      const T g = t.node(t.top_).grad.at(0);
      Tensor<T>& da = t.grad_of(a);
      for (int64_t i = 0; i < da.numel(); ++i) da.at(i) += g;
    });
  }

  Ref mean(Ref a) {
    const int64_t n = val(a).numel();
    return scale(sum(a), T(1) / static_cast<T>(n));
  }

  // ----- layer ops ---------------------------------------------------------

  // y[i][j] = x[i][j] + b[j]
  Ref add_bias_rows(Ref x, Ref b) {
    const auto& xv = val(x);
    const auto& bv = val(b);
    const int64_t n = xv.extent(xv.rank() - 1);
    if (bv.numel() != n) {
      throw DimensionError("add_bias_rows: bias " + bv.shape_str() + " vs row width " +
                           std::to_string(n));
    }
    const int64_t rows = xv.numel() / n;
    Tensor<T> c = Tensor<T>::uninit(xv.shape());
    kern::add_row_broadcast(xv.data(), bv.data(), c.data(), rows, n);
    return push(std::move(c), needs_grad(x) || needs_grad(b), {x.id, b.id}, [=](Tape& t) {
      const Tensor<T>& dc = t.node(t.top_).grad;
      if (t.needs_grad(x)) kern::accumulate(t.grad_of(x).data(), dc.data(), dc.numel());
      if (t.needs_grad(b)) {
        Tensor<T>& db = t.grad_of(b);
        for (int64_t i = 0; i < rows; ++i) {
          const T* r = dc.data() + i * n;
          for (int64_t j = 0; j < n; ++j) db.at(j) += r[j];
        }
      }
    });
  }

  // Per-row normalization to zero mean / unit variance, then affine.
  Ref layer_norm(Ref x, Ref gain, Ref bias, T eps = T(1e-5)) {
    const auto& xv = val(x);
    const int64_t d = xv.extent(xv.rank() - 1);
    if (val(gain).numel() != d || val(bias).numel() != d)
      throw DimensionError("layer_norm: gain/bias width must match " + std::to_string(d));
    const int64_t rows = xv.numel() / d;
    Tensor<T> c = Tensor<T>::uninit(xv.shape());
    auto xhat = std::make_shared<Tensor<T>>(Tensor<T>::uninit(xv.shape()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const T* g = val(gain).data();
    const T* b = val(bias).data();
    for (int64_t i = 0; i < rows; ++i) {
      const T* xr = xv.data() + i * d;
      double mu = 0.0;
      for (int64_t j = 0; j < d; ++j) mu += static_cast<double>(xr[j]);
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        const double t = static_cast<double>(xr[j]) - mu;
        var += t * t;
      }
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
      (*inv_std)[static_cast<size_t>(i)] = is;
      T* hr = xhat->data() + i * d;
      T* cr = c.data() + i * d;
      for (int64_t j = 0; j < d; ++j) {
        hr[j] = static_cast<T>((static_cast<double>(xr[j]) - mu) * is);
        cr[j] = g[j] * hr[j] + b[j];
      }
    }
    return push(std::move(c), needs_grad(x) || needs_grad(gain) || needs_grad(bias),
                {x.id, gain.id, bias.id}, [=](Tape& t) {
      const Tensor<T>& dy = t.node(t.top_).grad;
      const T* gv = t.val(gain).data();
      if (t.needs_grad(gain) || t.needs_grad(bias)) {
        Tensor<T>* dg = t.needs_grad(gain) ? &t.grad_of(gain) : nullptr;
        Tensor<T>* db = t.needs_grad(bias) ? &t.grad_of(bias) : nullptr;
        for (int64_t i = 0; i < rows; ++i) {
          const T* dyr = dy.data() + i * d;
          const T* hr = xhat->data() + i * d;
          for (int64_t j = 0; j < d; ++j) {
            if (dg) dg->at(j) += dyr[j] * hr[j];
            if (db) db->at(j) += dyr[j];
          }
        }
      }
      if (t.needs_grad(x)) {
        Tensor<T>& dx = t.grad_of(x);
        for (int64_t i = 0; i < rows; ++i) {
          const T* dyr = dy.data() + i * d;
          const T* hr = xhat->data() + i * d;
          T* dxr = dx.data() + i * d;
          const double is = (*inv_std)[static_cast<size_t>(i)];
          double m1 = 0.0, m2 = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double dh = static_cast<double>(dyr[j]) * static_cast<double>(gv[j]);
            m1 += dh;
            m2 += dh * static_cast<double>(hr[j]);
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (int64_t j = 0; j < d; ++j) {
            const double dh = static_cast<double>(dyr[j]) * static_cast<double>(gv[j]);
            dxr[j] += static_cast<T>(is * (dh - m1 - static_cast<double>(hr[j]) * m2));
          }
        }
      }
    });
  }

  // Strided cross-correlation over packed segments. w is [K x Cin x Cout].
  Ref conv1d(Ref x, Ref w, Ref b, const Segments& seg, int64_t stride, int64_t pad) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    if (wv.rank() != 3) throw DimensionError("conv1d: weights must be [K x Cin x Cout]");
    const int64_t ksize = wv.extent(0), cin = wv.extent(1), cout = wv.extent(2);
    if (xv.extent(xv.rank() - 1) != cin) {
      throw DimensionError("conv1d: input channels " +
                           std::to_string(xv.extent(xv.rank() - 1)) + " vs weight Cin " +
                           std::to_string(cin));
    }
    if (val(b).numel() != cout) throw DimensionError("conv1d: bias width mismatch");
    auto seg_in = std::make_shared<Segments>(seg);
    std::vector<int64_t> out_lens(seg.len.size());
    for (size_t s = 0; s < seg.len.size(); ++s) {
      const int64_t lo = (seg.len[s] + 2 * pad - ksize) / stride + 1;
      if (lo < 1) throw DimensionError("conv1d: segment too short for kernel");
      out_lens[s] = lo;
    }
    auto seg_out = std::make_shared<Segments>(Segments::from_lengths(out_lens));
    Tensor<T> c = Tensor<T>::uninit({seg_out->total(), cout});
    kern::conv1d_forward(xv.data(), wv.data(), val(b).data(), c.data(), *seg_in, *seg_out, cin,
                         cout, ksize, stride, pad);
    return push(std::move(c), needs_grad(x) || needs_grad(w) || needs_grad(b), {x.id, w.id, b.id},
                [=](Tape& t) {
      const Tensor<T>& dy = t.node(t.top_).grad;
      Tensor<T> dx_tmp, dw_tmp, db_tmp;
      Tensor<T>& dx = t.needs_grad(x) ? t.grad_of(x) : (dx_tmp = Tensor<T>(t.val(x).shape()), dx_tmp);
      Tensor<T>& dw = t.needs_grad(w) ? t.grad_of(w) : (dw_tmp = Tensor<T>(t.val(w).shape()), dw_tmp);
      Tensor<T>& db = t.needs_grad(b) ? t.grad_of(b) : (db_tmp = Tensor<T>(t.val(b).shape()), db_tmp);
      kern::conv1d_backward(t.val(x).data(), t.val(w).data(), dy.data(), dx.data(), dw.data(),
                            db.data(), *seg_in, *seg_out, cin, cout, ksize, stride, pad);
    });
  }

  const Segments& conv1d_out_segments(int64_t, const Segments&);  // not defined; see helpers

  // Fused multi-head scaled dot-product attention over packed segments.
  Ref attention(Ref q, Ref k, Ref v, const Segments& seg, int64_t heads, bool causal) {
    const auto& qv = val(q);
    const int64_t d = qv.extent(1);
    if (d % heads != 0)
      throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                        std::to_string(heads) + " heads");
    require_same_shape(qv.shape(), val(k).shape(), "attention q/k");
    require_same_shape(qv.shape(), val(v).shape(), "attention q/v");
    if (qv.extent(0) != seg.total()) throw DimensionError("attention: rows vs segments mismatch");
    auto segp = std::make_shared<Segments>(seg);
    auto prob_off = std::make_shared<std::vector<int64_t>>(seg.len.size() + 1);
    (*prob_off)[0] = 0;
    for (size_t s = 0; s < seg.len.size(); ++s)
      (*prob_off)[s + 1] = (*prob_off)[s] + heads * seg.len[s] * seg.len[s];
    auto probs = std::make_shared<typename Tensor<T>::Storage>();
    probs->resize(static_cast<size_t>(prob_off->back()));
    Tensor<T> out = Tensor<T>::uninit(qv.shape());
    kern::attention_forward(qv.data(), val(k).data(), val(v).data(), out.data(), probs->data(),
                            *prob_off, *segp, d, heads, causal);
    return push(std::move(out), needs_grad(q) || needs_grad(k) || needs_grad(v), {q.id, k.id, v.id},
                [=](Tape& t) {
      const Tensor<T>& dout = t.node(t.top_).grad;
      Tensor<T> dq_tmp(t.val(q).shape()), dk_tmp(t.val(k).shape()), dv_tmp(t.val(v).shape());
      Tensor<T>& dq = t.needs_grad(q) ? t.grad_of(q) : dq_tmp;
      Tensor<T>& dk = t.needs_grad(k) ? t.grad_of(k) : dk_tmp;
      Tensor<T>& dv = t.needs_grad(v) ? t.grad_of(v) : dv_tmp;
      kern::attention_backward(t.val(q).data(), t.val(k).data(), t.val(v).data(), probs->data(),
                               dout.data(), dq.data(), dk.data(), dv.data(), *prob_off, *segp, d,
                               heads, causal);
    });
  }

  // Per-segment concatenation: out segment s = a_s rows then b_s rows.
  Ref concat_rows(Ref a, Ref b, const Segments& seg_a, const Segments& seg_b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    const int64_t d = av.extent(1);
    if (bv.extent(1) != d) throw DimensionError("concat_rows: widths differ");
    if (seg_a.count() != seg_b.count()) throw DimensionError("concat_rows: segment counts differ");
    auto sa = std::make_shared<Segments>(seg_a);
    auto sb = std::make_shared<Segments>(seg_b);
    Tensor<T> c = Tensor<T>::uninit({seg_a.total() + seg_b.total(), d});
    int64_t row = 0;
    for (int64_t s = 0; s < seg_a.count(); ++s) {
      std::copy(av.data() + seg_a.off[s] * d, av.data() + seg_a.off[s + 1] * d,
                c.data() + row * d);
      row += seg_a.len[s];
      std::copy(bv.data() + seg_b.off[s] * d, bv.data() + seg_b.off[s + 1] * d,
                c.data() + row * d);
      row += seg_b.len[s];
    }
    return push(std::move(c), needs_grad(a) || needs_grad(b), {a.id, b.id}, [=](Tape& t) {
      const Tensor<T>& dc = t.node(t.top_).grad;
      int64_t r = 0;
      for (int64_t s = 0; s < sa->count(); ++s) {
        if (t.needs_grad(a)) {
          T* dst = t.grad_of(a).data() + sa->off[s] * d;
          const T* src = dc.data() + r * d;
          for (int64_t i = 0; i < sa->len[s] * d; ++i) dst[i] += src[i];
        }
        r += sa->len[s];
        if (t.needs_grad(b)) {
          T* dst = t.grad_of(b).data() + sb->off[s] * d;
          const T* src = dc.data() + r * d;
          for (int64_t i = 0; i < sb->len[s] * d; ++i) dst[i] += src[i];
        }
        r += sb->len[s];
      }
    });
  }

  // Adds fixed sinusoidal position encodings, restarting at each segment.
  Ref add_posenc(Ref x, const Segments& seg) {
    const auto& xv = val(x);
    const int64_t d = xv.extent(1);
    const std::vector<double> freqs = posenc_freqs(d);
    Tensor<T> c = xv;
    for (int64_t s = 0; s < seg.count(); ++s) {
      for (int64_t p = 0; p < seg.len[s]; ++p) {
        T* row = c.data() + (seg.off[s] + p) * d;
        apply_posenc_row(row, p, d, freqs);
      }
    }
    return push(std::move(c), needs_grad(x), {x.id}, [=](Tape& t) {
      if (!t.needs_grad(x)) return;
      const Tensor<T>& dc = t.node(t.top_).grad;
      kern::accumulate(t.grad_of(x).data(), dc.data(), dc.numel());
    });
  }

  static std::vector<double> posenc_freqs(int64_t d) {
    std::vector<double> freqs(static_cast<size_t>((d + 1) / 2));
    for (int64_t j = 0; j < d; j += 2) {
      freqs[static_cast<size_t>(j / 2)] =
          std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
    }
    return freqs;
  }

  static void apply_posenc_row(T* row, int64_t pos, int64_t d, const std::vector<double>& freqs) {
    for (int64_t j = 0; j < d; j += 2) {
      const double ang = static_cast<double>(pos) * freqs[static_cast<size_t>(j / 2)];
      row[j] += static_cast<T>(std::sin(ang));
      if (j + 1 < d) row[j + 1] += static_cast<T>(std::cos(ang));
    }
  }

  static void add_posenc_row(T* row, int64_t pos, int64_t d) {
    apply_posenc_row(row, pos, d, posenc_freqs(d));
  }

  // ----- losses (scalar outputs; local gradients computed in forward) ------

  // Mean over masked positions of -log softmax(logits)[target].
  Ref cross_entropy(Ref logits, const std::vector<int32_t>& targets,
                    const std::vector<uint8_t>& mask) {
    const auto& lv = val(logits);
    const int64_t vsize = lv.extent(lv.rank() - 1);
    const int64_t rows = lv.numel() / vsize;
    if (static_cast<int64_t>(targets.size()) != rows ||
        static_cast<int64_t>(mask.size()) != rows)
      throw DimensionError("cross_entropy: targets/mask length vs logit rows");
    int64_t count = 0;
    for (uint8_t m : mask) count += (m != 0);
    if (count == 0) throw UsageError("cross_entropy: empty loss mask");
    for (int64_t i = 0; i < rows; ++i) {
      if (mask[static_cast<size_t>(i)] &&
          (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= vsize)) {
        throw IndexError("cross_entropy: target " + std::to_string(targets[static_cast<size_t>(i)]) +
                         " out of range for vocab " + std::to_string(vsize));
      }
    }
    auto local = std::make_shared<Tensor<T>>(lv.shape());
    double loss = 0.0;
    const double inv_count = 1.0 / static_cast<double>(count);
    for (int64_t i = 0; i < rows; ++i) {
      if (!mask[static_cast<size_t>(i)]) continue;
      const T* xr = lv.data() + i * vsize;
      T* gr = local->data() + i * vsize;
      double mx = static_cast<double>(xr[0]);
      for (int64_t j = 1; j < vsize; ++j) mx = std::max(mx, static_cast<double>(xr[j]));
      double sum = 0.0;
      for (int64_t j = 0; j < vsize; ++j) sum += std::exp(static_cast<double>(xr[j]) - mx);
      const double lse = mx + std::log(sum);
      const int32_t tgt = targets[static_cast<size_t>(i)];
      loss += lse - static_cast<double>(xr[tgt]);
      for (int64_t j = 0; j < vsize; ++j) {
        const double p = std::exp(static_cast<double>(xr[j]) - lse);
        gr[j] = static_cast<T>((p - (j == tgt ? 1.0 : 0.0)) * inv_count);
      }
    }
    Tensor<T> c({1});
    c.at(0) = static_cast<T>(loss * inv_count);
    return scalar_loss(std::move(c), logits, local);
  }

  // -log p(target | log_probs) for one example; blank is the last class.
  Ref ctc(Ref log_probs, const std::vector<int32_t>& target) {
    const auto& lv = val(log_probs);
    const int64_t classes = lv.extent(lv.rank() - 1);
    const int64_t frames = lv.numel() / classes;
    auto local = std::make_shared<Tensor<T>>(lv.shape());
    const double loss = ctc_loss_grad(lv.data(), frames, classes, target, local->data());
    Tensor<T> c({1});
    c.at(0) = static_cast<T>(loss);
    return scalar_loss(std::move(c), log_probs, local);
  }

  // Mean over segments of ctc / frames (per_frame) or raw ctc.
  Ref ctc_packed(Ref log_probs, const Segments& seg,
                 const std::vector<std::vector<int32_t>>& targets, bool per_frame) {
    const auto& lv = val(log_probs);
    const int64_t classes = lv.extent(lv.rank() - 1);
    if (static_cast<int64_t>(targets.size()) != seg.count())
      throw DimensionError("ctc_packed: target count vs segment count");
    auto local = std::make_shared<Tensor<T>>(lv.shape());
    double total = 0.0;
    const double inv_b = 1.0 / static_cast<double>(seg.count());
    for (int64_t s = 0; s < seg.count(); ++s) {
      Tensor<T> g({seg.len[s], classes});
      const double l = ctc_loss_grad(lv.data() + seg.off[s] * classes, seg.len[s], classes,
                                     targets[static_cast<size_t>(s)], g.data());
      const double w = inv_b * (per_frame ? 1.0 / static_cast<double>(seg.len[s]) : 1.0);
      total += l * w;
      T* dst = local->data() + seg.off[s] * classes;
      for (int64_t i = 0; i < g.numel(); ++i) dst[i] += static_cast<T>(w) * g.at(i);
    }
    Tensor<T> c({1});
    c.at(0) = static_cast<T>(total);
    return scalar_loss(std::move(c), log_probs, local);
  }

  // Mean squared error over masked rows (mean over masked elements).
  Ref mse_masked(Ref pred, const Tensor<T>& target, const std::vector<uint8_t>& row_mask) {
    const auto& pv = val(pred);
    require_same_shape(pv.shape(), target.shape(), "mse_masked");
    const int64_t d = pv.extent(pv.rank() - 1);
    const int64_t rows = pv.numel() / d;
    if (static_cast<int64_t>(row_mask.size()) != rows)
      throw DimensionError("mse_masked: mask length vs rows");
    int64_t count = 0;
    for (uint8_t m : row_mask) count += (m != 0);
    if (count == 0) throw UsageError("mse_masked: empty mask");
    auto local = std::make_shared<Tensor<T>>(pv.shape());
    const double inv = 1.0 / static_cast<double>(count * d);
    double loss = 0.0;
    for (int64_t i = 0; i < rows; ++i) {
      if (!row_mask[static_cast<size_t>(i)]) continue;
      const T* pr = pv.data() + i * d;
      const T* tr = target.data() + i * d;
      T* gr = local->data() + i * d;
      for (int64_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(pr[j]) - static_cast<double>(tr[j]);
        loss += diff * diff * inv;
        gr[j] = static_cast<T>(2.0 * diff * inv);
      }
    }
    Tensor<T> c({1});
    c.at(0) = static_cast<T>(loss);
    return scalar_loss(std::move(c), pred, local);
  }

  // ----- backward ----------------------------------------------------------

  // Reverse accumulation from a scalar root. Gradients of nodes that do not
  // lead to the root stay zero. Re-running resets and reproduces gradients
  // bitwise.
  void backward(Ref root) {
    if (!root.valid() || root.id >= static_cast<int32_t>(nodes_.size()))
      throw UsageError("backward: invalid root");
    Node& r = nodes_[static_cast<size_t>(root.id)];
    if (r.value.numel() != 1) throw UsageError("backward: root must be scalar, got " +
                                               r.value.shape_str());
    for (auto& nd : nodes_) {
      if (nd.requires_grad) {
        nd.grad = Tensor<T>(nd.value.shape());
      }
    }
    if (!r.requires_grad) return;  // nothing trainable feeds the root
    r.grad.at(0) = T(1);
    for (int32_t id = root.id; id >= 0; --id) {
      Node& nd = nodes_[static_cast<size_t>(id)];
      if (!nd.requires_grad || !nd.back) continue;
      top_ = id;
      nd.back(*this);
    }
    ran_backward_ = true;
  }

  // ----- access ------------------------------------------------------------

  const Tensor<T>& value(Ref r) const { return val(r); }

  const Tensor<T>& grad(Ref r) const {
    const Node& nd = nodes_.at(static_cast<size_t>(r.id));
    if (!nd.requires_grad) throw UsageError("grad: node does not require gradients");
    if (!ran_backward_) throw UsageError("grad: backward has not run");
    return nd.grad;
  }

  bool needs_grad(Ref r) const { return nodes_.at(static_cast<size_t>(r.id)).requires_grad; }
  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }
  const std::vector<int32_t>& inputs_of(Ref r) const {
    return nodes_.at(static_cast<size_t>(r.id)).inputs;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<int32_t> inputs;
    std::function<void(Tape&)> back;
  };

  const Tensor<T>& val(Ref r) const {
    if (!r.valid() || r.id >= static_cast<int32_t>(nodes_.size()))
      throw UsageError("tape: invalid node reference");
    return nodes_[static_cast<size_t>(r.id)].value;
  }

  Tensor<T>& grad_of(Ref r) { return nodes_[static_cast<size_t>(r.id)].grad; }
  Node& node(int32_t id) { return nodes_[static_cast<size_t>(id)]; }

  Ref push(Tensor<T> v, bool requires_grad, std::vector<int32_t> inputs,
           std::function<void(Tape&)> back) {
    const int32_t id = static_cast<int32_t>(nodes_.size());
    for (int32_t in : inputs) {
      if (in >= id) throw IntegrityError("tape: input id must precede consumer");
    }
    Node nd;
    nd.value = std::move(v);
    nd.requires_grad = requires_grad;
    nd.inputs = std::move(inputs);
    if (requires_grad) nd.back = std::move(back);
    nodes_.push_back(std::move(nd));
    return Ref{id};
  }

  Ref ew2(Ref a, Ref b, const char* opname) {
    const auto& av = val(a);
    const auto& bv = val(b);
    require_same_shape(av.shape(), bv.shape(), opname);
    Tensor<T> c = Tensor<T>::uninit(av.shape());
    const std::string op = opname;
    if (op == "add") {
      for (int64_t i = 0; i < c.numel(); ++i) c.at(i) = av.at(i) + bv.at(i);
    } else if (op == "sub") {
      for (int64_t i = 0; i < c.numel(); ++i) c.at(i) = av.at(i) - bv.at(i);
    } else {
      for (int64_t i = 0; i < c.numel(); ++i) c.at(i) = av.at(i) * bv.at(i);
    }
    const int kind = (op == "add") ? 0 : (op == "sub" ? 1 : 2);
    return push(std::move(c), needs_grad(a) || needs_grad(b), {a.id, b.id}, [=](Tape& t) {
      const Tensor<T>& dc = t.node(t.top_).grad;
      if (kind == 2) {
        const Tensor<T>& A = t.val(a);
        const Tensor<T>& B = t.val(b);
        if (t.needs_grad(a)) {
          Tensor<T>& da = t.grad_of(a);
          for (int64_t i = 0; i < dc.numel(); ++i) da.at(i) += dc.at(i) * B.at(i);
        }
        if (t.needs_grad(b)) {
          Tensor<T>& db = t.grad_of(b);
          for (int64_t i = 0; i < dc.numel(); ++i) db.at(i) += dc.at(i) * A.at(i);
        }
      } else {
        if (t.needs_grad(a)) kern::accumulate(t.grad_of(a).data(), dc.data(), dc.numel());
        if (t.needs_grad(b)) {
          Tensor<T>& db = t.grad_of(b);
          const T sgn = (kind == 1) ? T(-1) : T(1);
          for (int64_t i = 0; i < dc.numel(); ++i) db.at(i) += sgn * dc.at(i);
        }
      }
    });
  }

  // Loss node whose local input-gradient was precomputed in the forward pass.
  Ref scalar_loss(Tensor<T> c, Ref input_ref, std::shared_ptr<Tensor<T>> local) {
    if (!c.all_finite()) throw NumericError("loss is not finite");
    return push(std::move(c), needs_grad(input_ref), {input_ref.id}, [=](Tape& t) {
      if (!t.needs_grad(input_ref)) return;
      const T g = t.node(t.top_).grad.at(0);
      Tensor<T>& din = t.grad_of(input_ref);
      for (int64_t i = 0; i < din.numel(); ++i) din.at(i) += g * local->at(i);
    });
  }

  std::vector<Node> nodes_;
  int32_t top_ = -1;  // node whose backward fn is currently running
  bool ran_backward_ = false;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace pcst

#endif  // PCST_TAPE_HPP
