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

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "s2vec/error.hpp"
#include "s2vec/numerics/autodiff.hpp"

namespace s2vec {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double autodiff = 0.0;
  double numeric = 0.0;
  std::size_t zero_agreements = 0;  // elements where both sides are within round-off of 0
};

namespace gc_detail {

// Autodiff runs on a double tape; the difference quotients are evaluated on
// a tape of type E.
template <std::floating_point E, typename F>
GradCheckResult run(F&& f, const std::vector<Tensor<double>>& params, double h, double floor) {
  std::vector<Tensor<double>> grads;
  for (const auto& p : params) grads.push_back(Tensor<double>::zeros_like(p));
  {
    Tape<double> tape;
    std::vector<Tape<double>::Var> vars;
    for (std::size_t k = 0; k < params.size(); ++k) vars.push_back(tape.param(params[k], &grads[k]));
    tape.backward(f(tape, vars));
  }
  std::vector<Tensor<E>> work;
  for (const auto& p : params) work.push_back(p.template cast<E>());
  auto eval = [&]() {
    Tape<E> tape;
    std::vector<typename Tape<E>::Var> vars;
    for (auto& p : work) vars.push_back(tape.param(p, nullptr));
    const E v = tape.value(f(tape, vars))[0];
    detail::require<RuntimeFailure>(std::isfinite(v), "grad_check: non-finite function value");
    return v;
  };
  const E step = static_cast<E>(h);
  GradCheckResult result;
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (std::size_t i = 0; i < work[k].size(); ++i) {
      const E saved = work[k][i];
      work[k][i] = saved + step;
      const E up = eval();
      work[k][i] = saved - step;
      const E down = eval();
      work[k][i] = saved;
      const double numeric = static_cast<double>((up - down) / (2 * step));
      const double a = grads[k][i];
      const double noise = static_cast<double>(64 * std::numeric_limits<E>::epsilon() *
                                               std::max(std::fabs(up), std::fabs(down)) / step);
      if (std::fabs(a) <= noise && std::fabs(numeric) <= noise) {
        ++result.zero_agreements;
        continue;
      }
      const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), floor});
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = k;
        result.worst_index = i;
        result.autodiff = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace gc_detail

// f builds a scalar on the tape from one Var per parameter. Each element's
// relative error is |a - n| / max(|a|, |n|, floor). Elements whose autodiff
// and central-difference values both lie inside the difference quotient's
// rounding bound (64 eps max|f(w +- h)| / h) count as agreeing zeros; a
// relative error between two round-off residues carries no information.
inline GradCheckResult grad_check(
    const std::function<Tape<double>::Var(Tape<double>&, const std::vector<Tape<double>::Var>&)>& f,
    std::vector<Tensor<double>> params, double h = 1e-5, double floor = 1e-8) {
  return gc_detail::run<double>(f, params, h, floor);
}

// Same check with the difference quotients taken in long double, for
// composite losses whose small gradient entries sit below what a double
// difference quotient can resolve. f must accept Tape<double> and
// Tape<long double> (a generic lambda). The gradient under test is still the
// double tape's.
template <typename F>
GradCheckResult grad_check_extended(F&& f, std::vector<Tensor<double>> params, double h = 1e-5,
                                    double floor = 1e-8) {
  return gc_detail::run<long double>(f, params, h, floor);
}

}  // namespace s2vec
