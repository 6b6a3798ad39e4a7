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

#ifndef PCST_GRADCHECK_HPP
#define PCST_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pcst/rng.hpp"
#include "pcst/tensor.hpp"

namespace pcst {

// Compares reverse-mode gradients against central differences
// (f(p+eps) - f(p-eps)) / (2 eps) on a sampled subset of coordinates.
// Runs in f64; returns the max relative error over all samples.
struct GradCheckOptions {
  double eps = 1e-5;
  int64_t samples_per_tensor = 8;  // <=0 checks every coordinate
  uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // "tensor#i[coord]"
};

inline GradCheckReport grad_check(
    std::vector<Tensor<double>> params,
    const std::function<double(const std::vector<Tensor<double>>&)>& loss_fn,
    const std::function<std::vector<Tensor<double>>(const std::vector<Tensor<double>>&)>& grad_fn,
    const GradCheckOptions& opt = {}) {
  if (opt.eps <= 0.0) throw UsageError("grad_check: eps must be positive");
  const double base = loss_fn(params);
  if (!std::isfinite(base)) throw NumericError("grad_check: loss is not finite");
  const std::vector<Tensor<double>> grads = grad_fn(params);
  if (grads.size() != params.size())
    throw IntegrityError("grad_check: gradient count mismatch");

  Rng rng(opt.seed);
  GradCheckReport rep;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const int64_t n = params[pi].numel();
    std::vector<int64_t> coords;
    if (opt.samples_per_tensor <= 0 || n <= opt.samples_per_tensor) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      for (int64_t i = 0; i < opt.samples_per_tensor; ++i)
        coords.push_back(rng.uniform_int(n));
    }
    for (int64_t c : coords) {
      const double orig = params[pi].at(c);
      params[pi].at(c) = orig + opt.eps;
      const double up = loss_fn(params);
      params[pi].at(c) = orig - opt.eps;
      const double down = loss_fn(params);
      params[pi].at(c) = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: perturbed loss is not finite");
      const double fd = (up - down) / (2.0 * opt.eps);
      const double ad = grads[pi].at(c);
      // The floor keeps fd rounding noise (~|loss|*1e-16/eps) from dominating
      // coordinates whose true gradient is effectively zero.
      const double denom = std::max({std::fabs(fd), std::fabs(ad), 1e-6});
      const double rel = std::fabs(fd - ad) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "tensor#" + std::to_string(pi) + "[" + std::to_string(c) + "]";
      }
    }
  }
  return rep;
}

}  // namespace pcst

#endif  // PCST_GRADCHECK_HPP
