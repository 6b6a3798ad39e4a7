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

#ifndef PCST_TENSOR_HPP
#define PCST_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "pcst/error.hpp"
#include "pcst/rng.hpp"

namespace pcst {

// std::allocator that leaves trivially-constructible elements uninitialized
// on default construction; Tensor::uninit uses it for outputs every op fully
// overwrites, which matters at training batch sizes.
template <typename T>
struct NoInitAlloc {
  using value_type = T;
  NoInitAlloc() = default;
  template <class U>
  constexpr NoInitAlloc(const NoInitAlloc<U>&) noexcept {}
  T* allocate(size_t n) { return std::allocator<T>{}.allocate(n); }
  void deallocate(T* p, size_t n) { std::allocator<T>{}.deallocate(p, n); }
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
  bool operator==(const NoInitAlloc&) const { return true; }
  bool operator!=(const NoInitAlloc&) const { return false; }
};

// Dense row-major tensor over float (training) or double (verification).
template <typename T>
class Tensor {
 public:
  using Storage = std::vector<T, NoInitAlloc<T>>;

  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.resize(static_cast<size_t>(checked_numel()));
    std::fill(data_.begin(), data_.end(), T(0));
  }

  Tensor(std::vector<int64_t> shape, std::vector<T> data) : shape_(std::move(shape)) {
    if (checked_numel() != static_cast<int64_t>(data.size())) {
      throw DimensionError("data size " + std::to_string(data.size()) +
                           " does not match shape " + shape_str());
    }
    data_.assign(data.begin(), data.end());
  }

  // Storage left uninitialized; caller must write every element.
  static Tensor uninit(std::vector<int64_t> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.resize(static_cast<size_t>(t.checked_numel()));
    return t;
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor randn(std::vector<int64_t> shape, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
    return t;
  }

  static Tensor identity(int64_t n) {
    Tensor t({n, n});
    for (int64_t i = 0; i < n; ++i) t.data_[static_cast<size_t>(i * n + i)] = T(1);
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t extent(int d) const { return shape_[static_cast<size_t>(d)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  // 2-D accessors (rows x cols), used throughout the layer code.
  int64_t rows() const { return shape_.size() >= 1 ? shape_[0] : 1; }
  int64_t cols() const {
    int64_t c = 1;
    for (size_t d = 1; d < shape_.size(); ++d) c *= shape_[d];
    return c;
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  Storage& vec() { return data_; }
  const Storage& vec() const { return data_; }

  T& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
  T at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
  T& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * cols() + j)]; }
  T at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * cols() + j)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void check_finite(const std::string& what) const {
    if (!all_finite()) throw NumericError("non-finite values in " + what);
  }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.reset(shape_);
    for (size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  // Re-shape in place without touching data (used by cast()).
  void reset(const std::vector<int64_t>& shape) {
    shape_ = shape;
    int64_t n = 1;
    for (int64_t e : shape_) n *= e;
    data_.assign(static_cast<size_t>(n), T(0));
  }

 private:
  int64_t checked_numel() const {
    int64_t n = 1;
    for (int64_t e : shape_) {
      if (e <= 0) throw DimensionError("tensor extent must be positive, got " + shape_str());
      n *= e;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

inline void require_same_shape(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                               const char* op) {
  if (a != b) {
    auto str = [](const std::vector<int64_t>& s) {
      std::string r = "[";
      for (size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
      return r + "]";
    };
    throw DimensionError(std::string(op) + ": shape mismatch " + str(a) + " vs " + str(b));
  }
}

}  // namespace pcst

#endif  // PCST_TENSOR_HPP
