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

#ifndef PCST_CTC_HPP
#define PCST_CTC_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pcst/error.hpp"

namespace pcst {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  return (a > b) ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

// Frames needed to emit `target`: one per label plus a blank between repeats.
inline int64_t ctc_min_frames(const std::vector<int32_t>& target) {
  int64_t need = static_cast<int64_t>(target.size());
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++need;
  return need;
}

// Log-space forward recursion over the blank-extended label sequence.
// lp is [frames x classes] row-major log-probabilities, blank = classes - 1.
// Returns -log p(target | lp). If grad is non-null, accumulates the local
// gradient d(loss)/d(lp) into it via the beta recursion.
template <typename T>
double ctc_loss_grad(const T* lp, int64_t frames, int64_t classes,
                     const std::vector<int32_t>& target, T* grad) {
  const int64_t blank = classes - 1;
  const int64_t u = static_cast<int64_t>(target.size());
  if (u < 1) throw UsageError("ctc: empty target");
  for (int32_t c : target) {
    if (c < 0 || c >= blank) {
      throw IndexError("ctc: label " + std::to_string(c) + " out of range for " +
                       std::to_string(blank) + " non-blank classes");
    }
  }
  const int64_t need = ctc_min_frames(target);
  if (frames < need) {
    throw InfeasibleAlignmentError("ctc: target of length " + std::to_string(u) + " needs at least " +
                                   std::to_string(need) + " frames, got " + std::to_string(frames));
  }

  const int64_t s_len = 2 * u + 1;
  auto label_at = [&](int64_t s) -> int64_t {
    return (s % 2 == 0) ? blank : target[static_cast<size_t>(s / 2)];
  };
  auto lpv = [&](int64_t t, int64_t s) -> double {
    return static_cast<double>(lp[t * classes + label_at(s)]);
  };

  std::vector<double> alpha(static_cast<size_t>(frames * s_len), kLogZero);
  alpha[0] = lpv(0, 0);
  if (s_len > 1) alpha[1] = lpv(0, 1);
  for (int64_t t = 1; t < frames; ++t) {
    for (int64_t s = 0; s < s_len; ++s) {
      double a = alpha[static_cast<size_t>((t - 1) * s_len + s)];
      if (s >= 1) a = log_add(a, alpha[static_cast<size_t>((t - 1) * s_len + s - 1)]);
      if (s >= 2 && label_at(s) != blank && label_at(s) != label_at(s - 2))
        a = log_add(a, alpha[static_cast<size_t>((t - 1) * s_len + s - 2)]);
      if (a != kLogZero) alpha[static_cast<size_t>(t * s_len + s)] = a + lpv(t, s);
    }
  }

  double log_p = alpha[static_cast<size_t>((frames - 1) * s_len + s_len - 1)];
  if (s_len > 1)
    log_p = log_add(log_p, alpha[static_cast<size_t>((frames - 1) * s_len + s_len - 2)]);
  if (log_p == kLogZero)
    throw InfeasibleAlignmentError("ctc: no feasible alignment path");

  if (grad != nullptr) {
    // Beta includes the emission at t, so alpha+beta double-counts lp[t][.].
    std::vector<double> beta(static_cast<size_t>(frames * s_len), kLogZero);
    beta[static_cast<size_t>((frames - 1) * s_len + s_len - 1)] = lpv(frames - 1, s_len - 1);
    if (s_len > 1)
      beta[static_cast<size_t>((frames - 1) * s_len + s_len - 2)] = lpv(frames - 1, s_len - 2);
    for (int64_t t = frames - 2; t >= 0; --t) {
      for (int64_t s = 0; s < s_len; ++s) {
        double b = beta[static_cast<size_t>((t + 1) * s_len + s)];
        if (s + 1 < s_len) b = log_add(b, beta[static_cast<size_t>((t + 1) * s_len + s + 1)]);
        if (s + 2 < s_len && label_at(s + 2) != blank && label_at(s + 2) != label_at(s))
          b = log_add(b, beta[static_cast<size_t>((t + 1) * s_len + s + 2)]);
        if (b != kLogZero) beta[static_cast<size_t>(t * s_len + s)] = b + lpv(t, s);
      }
    }
    std::vector<double> acc(static_cast<size_t>(classes));
    for (int64_t t = 0; t < frames; ++t) {
      std::fill(acc.begin(), acc.end(), kLogZero);
      for (int64_t s = 0; s < s_len; ++s) {
        const double a = alpha[static_cast<size_t>(t * s_len + s)];
        const double b = beta[static_cast<size_t>(t * s_len + s)];
        if (a == kLogZero || b == kLogZero) continue;
        const int64_t c = label_at(s);
        acc[static_cast<size_t>(c)] = log_add(acc[static_cast<size_t>(c)], a + b);
      }
      for (int64_t c = 0; c < classes; ++c) {
        if (acc[static_cast<size_t>(c)] == kLogZero) continue;
        const double q =
            std::exp(acc[static_cast<size_t>(c)] - static_cast<double>(lp[t * classes + c]) - log_p);
        grad[t * classes + c] += static_cast<T>(-q);
      }
    }
  }
  return -log_p;
}

}  // namespace pcst

#endif  // PCST_CTC_HPP
