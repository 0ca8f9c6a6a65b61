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

#include <cmath>
#include <span>

#include "s2vec/error.hpp"

namespace s2vec::downstream {

// 1 - SS_res / SS_tot.
inline double metric_r2(std::span<const double> pred, std::span<const double> truth) {
  detail::require(pred.size() == truth.size(), "r2: length mismatch");
  detail::require(truth.size() >= 2, "r2 needs at least two values");
  double mean = 0;
  for (double t : truth) mean += t;
  mean /= static_cast<double>(truth.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  detail::require(ss_tot > 0, "r2 undefined for constant truth");
  return 1.0 - ss_res / ss_tot;
}

inline double metric_mae(std::span<const double> pred, std::span<const double> truth) {
  detail::require(pred.size() == truth.size(), "mae: length mismatch");
  detail::require(!truth.empty(), "mae needs at least one value");
  double acc = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) acc += std::fabs(pred[i] - truth[i]);
  return acc / static_cast<double>(truth.size());
}

}  // namespace s2vec::downstream
