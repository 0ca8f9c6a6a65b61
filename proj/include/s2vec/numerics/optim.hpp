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

// AdamW with decoupled weight decay, cosine learning-rate decay, and
// global-norm gradient clipping.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "s2vec/error.hpp"
#include "s2vec/numerics/tensor.hpp"

namespace s2vec {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.001;

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

template <std::floating_point T>
struct OptimizerState {
  AdamWConfig config;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;

  static OptimizerState for_params(const std::vector<Tensor<T>>& params, AdamWConfig cfg = {}) {
    OptimizerState s;
    s.config = cfg;
    for (const auto& p : params) {
      s.m.push_back(Tensor<T>::zeros_like(p));
      s.v.push_back(Tensor<T>::zeros_like(p));
    }
    return s;
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
template <std::floating_point T>
void adamw_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads, OptimizerState<T>& state,
                double lr) {
  detail::require(params.size() == grads.size() && params.size() == state.m.size(),
                  "adamw: parameter/gradient/state count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    detail::require(params[k].same_shape(grads[k]) && params[k].same_shape(state.m[k]),
                    "adamw: shape mismatch for parameter " + std::to_string(k));
    detail::require(grads[k].all_finite(), "adamw: non-finite gradient for parameter " + std::to_string(k));
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      const double wi = w[i];
      w[i] = static_cast<T>(wi - lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * wi));
    }
  }
}

struct LrSchedule {
  double initial_lr = 5e-4;
  double alpha = 0.1;
  std::int64_t total_steps = 1;
};

// initial * (alpha + (1 - alpha) * 0.5 * (1 + cos(pi * step / total))),
// held at the floor once step passes total_steps.
inline double cosine_lr(std::int64_t step, const LrSchedule& s) {
  detail::require(step >= 0, "cosine_lr: negative step");
  detail::require(s.total_steps >= 1, "cosine_lr: total_steps must be >= 1");
  const double frac = static_cast<double>(std::min(step, s.total_steps)) / static_cast<double>(s.total_steps);
  return s.initial_lr * (s.alpha + (1.0 - s.alpha) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
template <std::floating_point T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double max_norm) {
  detail::require(max_norm > 0, "clip_global_norm: max_norm must be positive");
  double sq = 0;
  for (const auto& g : grads) {
    detail::require(g.all_finite(), "clip_global_norm: non-finite gradient");
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& g : grads)
      for (auto& v : g.values()) v = static_cast<T>(v * scale);
  }
  return norm;
}

}  // namespace s2vec
