// Copyright 2026 The S2Vec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "s2vec/error.hpp"

namespace s2vec {

// Dense row-major array. Rank-2 tensors are the working shape of every
// kernel; rank-1 tensors are treated as a single row.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0)) : shape_(std::move(shape)) {
    for (auto e : shape_) detail::require(e > 0, "tensor extents must be positive");
    data_.assign(product(shape_), fill);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto e : shape_) detail::require(e > 0, "tensor extents must be positive");
    detail::require(product(shape_) == data_.size(), "tensor data length does not match shape " + shape_string());
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) { return Tensor({rows, cols}, fill); }
  static Tensor vector(std::size_t n, T fill = T(0)) { return Tensor({n}, fill); }
  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }
  static Tensor zeros_like(const Tensor& t) { return t.empty() ? Tensor() : Tensor(t.shape_, T(0)); }

  template <std::floating_point U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const { return std::span<const T>(data_).subspan(r * cols(), cols()); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? ", " : "") + std::to_string(shape_[i]);
    return s + "]";
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t product(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <std::floating_point T>
T squared_norm(const Tensor<T>& t) {
  T s = 0;
  for (T v : t.values()) s += v * v;
  return s;
}

}  // namespace s2vec
