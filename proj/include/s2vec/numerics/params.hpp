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

#include <string>
#include <unordered_map>
#include <vector>

#include "s2vec/error.hpp"
#include "s2vec/numerics/tensor.hpp"

namespace s2vec {

// Ordered, named collection of learnable tensors.
template <std::floating_point T>
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    detail::require(!index_.contains(name), "duplicate parameter name " + name);
    index_.emplace(name, values_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  Tensor<T>& operator[](std::size_t i) { return values_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return values_[i]; }
  std::vector<Tensor<T>>& values() { return values_; }
  const std::vector<Tensor<T>>& values() const { return values_; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    detail::require(it != index_.end(), "unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.contains(name); }
  Tensor<T>& operator[](const std::string& name) { return values_[index(name)]; }
  const Tensor<T>& operator[](const std::string& name) const { return values_[index(name)]; }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  std::vector<Tensor<T>> zero_grads() const {
    std::vector<Tensor<T>> g;
    g.reserve(values_.size());
    for (const auto& v : values_) g.push_back(Tensor<T>::zeros_like(v));
    return g;
  }

  template <std::floating_point U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace s2vec
