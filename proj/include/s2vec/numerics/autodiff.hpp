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

// Tape-based reverse-mode automatic differentiation over rank-2 tensors.
//
// A Tape records every op of one forward pass in execution order. Each node
// owns its value (or borrows a parameter tensor) and a backward closure that
// reads saved values by node id and accumulates into its inputs' gradients.
// backward() walks the record once in reverse. Parameter leaves accumulate
// straight into caller-owned gradient tensors, so several tapes can share
// one parameter set and gradients are reduced by the caller.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "s2vec/error.hpp"
#include "s2vec/numerics/tensor.hpp"

namespace s2vec {

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <std::floating_point T>
class Tape {
 public:
  struct Var {
    std::uint32_t id = 0;
  };
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() { nodes_.reserve(256); }

  // Value with no gradient.
  Var constant(Tensor<T> value) { return push_leaf(std::move(value), nullptr, false); }

  // Leaf whose gradient is kept on the tape (read it with grad()).
  Var input(Tensor<T> value) { return push_leaf(std::move(value), nullptr, true); }

  // Borrowed parameter; gradients accumulate into *grad_sink, which must have
  // the parameter's shape. A null sink makes the parameter a constant.
  Var param(const Tensor<T>& value, Tensor<T>* grad_sink) {
    Node n;
    n.borrowed = &value;
    n.sink = grad_sink;
    n.requires_grad = grad_sink != nullptr;
    if (grad_sink) detail::require(grad_sink->same_shape(value), "gradient sink shape mismatch");
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.borrowed ? *n.borrowed : n.owned;
  }

  // Gradient of a tape-owned node after backward(); empty if none reached it.
  const Tensor<T>& grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.sink ? *n.sink : n.grad;
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Records an op result. `fn` runs during backward only if some input
  // requires a gradient.
  Var push(Tensor<T> value, std::span<const Var> inputs, BackwardFn fn) {
    detail::require<RuntimeFailure>(value.all_finite(), "non-finite value produced during forward pass");
    bool needs = false;
    for (Var in : inputs) needs = needs || nodes_[in.id].requires_grad;
    Node n;
    n.owned = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Var push(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  // Gradient accumulator for `v`, or null if v does not require a gradient.
  Tensor<T>* grad_target(Var v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.sink) return n.sink;
    if (n.grad.empty()) n.grad = Tensor<T>::zeros_like(value(v));
    return &n.grad;
  }

  // Seeds d(loss)/d(loss) = seed and propagates to every reachable node.
  void backward(Var loss, T seed = T(1)) {
    detail::require(value(loss).size() == 1, "backward() needs a scalar loss");
    if (!nodes_[loss.id].requires_grad) return;
    grad_target(loss)->fill(seed);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.backward || n.grad.empty()) continue;
      const Tensor<T> g = std::move(n.grad);
      n.backward(*this, g);
      n.grad = Tensor<T>();
    }
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    Tensor<T>* sink = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push_leaf(Tensor<T> value, Tensor<T>* sink, bool requires_grad) {
    Node n;
    n.owned = std::move(value);
    n.sink = sink;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

namespace ad {

template <typename T>
using Var = typename Tape<T>::Var;

namespace kernels {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void matmul_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
template <typename T>
void matmul_nt_acc(const T* dc, const T* b, T* da, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = dc + i * n;
    T* darow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      darow[p] += s;
    }
  }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
template <typename T>
void matmul_tn_acc(const T* a, const T* dc, T* db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
    }
  }
}

}  // namespace kernels

template <typename T>
void check_matrix(const Tensor<T>& t, const char* what) {
  detail::require(t.rank() == 2, std::string(what) + " must be rank 2, got " + t.shape_string());
}

// y = x W
template <typename T>
Var<T> matmul(Tape<T>& tape, Var<T> x, Var<T> w) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  check_matrix(xv, "matmul lhs");
  check_matrix(wv, "matmul rhs");
  detail::require(xv.cols() == wv.rows(),
                  "matmul shape mismatch: " + xv.shape_string() + " x " + wv.shape_string());
  const std::size_t m = xv.rows(), k = xv.cols(), n = wv.cols();
  auto y = Tensor<T>::matrix(m, n);
  kernels::matmul_acc(xv.data(), wv.data(), y.data(), m, k, n);
  return tape.push(std::move(y), {x, w}, [x, w, m, k, n](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_target(x)) kernels::matmul_nt_acc(g.data(), t.value(w).data(), gx->data(), m, k, n);
    if (auto* gw = t.grad_target(w)) kernels::matmul_tn_acc(t.value(x).data(), g.data(), gw->data(), m, k, n);
  });
}

// y = x W + b, with x [m, in], W [in, out], b [out] broadcast over rows.
template <typename T>
Var<T> linear(Tape<T>& tape, Var<T> x, Var<T> w, Var<T> b) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  const auto& bv = tape.value(b);
  check_matrix(xv, "linear input");
  check_matrix(wv, "linear weight");
  detail::require(xv.cols() == wv.rows(),
                  "linear shape mismatch: " + xv.shape_string() + " x " + wv.shape_string());
  detail::require(bv.size() == wv.cols(), "linear bias length mismatch");
  const std::size_t m = xv.rows(), k = xv.cols(), n = wv.cols();
  auto y = Tensor<T>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.data(), bv.data() + n, y.data() + i * n);
  kernels::matmul_acc(xv.data(), wv.data(), y.data(), m, k, n);
  return tape.push(std::move(y), {x, w, b}, [x, w, b, m, k, n](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_target(x)) kernels::matmul_nt_acc(g.data(), t.value(w).data(), gx->data(), m, k, n);
    if (auto* gw = t.grad_target(w)) kernels::matmul_tn_acc(t.value(x).data(), g.data(), gw->data(), m, k, n);
    if (auto* gb = t.grad_target(b)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[i * n + j];
    }
  });
}

template <typename T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require(av.same_shape(bv), "add shape mismatch: " + av.shape_string() + " vs " + bv.shape_string());
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.push(std::move(y), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    for (Var<T> in : {a, b}) {
      if (auto* gi = t.grad_target(in))
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
    }
  });
}

template <typename T>
Var<T> scale(Tape<T>& tape, Var<T> a, T s) {
  Tensor<T> y = tape.value(a);
  for (auto& v : y.values()) v *= s;
  return tape.push(std::move(y), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    if (auto* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
  });
}

// y = w * x for a learnable one-element tensor w.
template <typename T>
Var<T> mul_scalar(Tape<T>& tape, Var<T> x, Var<T> w) {
  detail::require(tape.value(w).size() == 1, "mul_scalar weight must have one element");
  const T s = tape.value(w)[0];
  Tensor<T> y = tape.value(x);
  for (auto& v : y.values()) v *= s;
  return tape.push(std::move(y), {x, w}, [x, w](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.value(x);
    if (auto* gx = t.grad_target(x)) {
      const T s = t.value(w)[0];
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += s * g[i];
    }
    if (auto* gw = t.grad_target(w)) {
      T acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      (*gw)[0] += acc;
    }
  });
}

template <typename T>
Var<T> sum(Tape<T>& tape, Var<T> a) {
  T s = 0;
  for (T v : tape.value(a).values()) s += v;
  return tape.push(Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    if (auto* ga = t.grad_target(a))
      for (auto& v : ga->values()) v += g[0];
  });
}

template <typename T>
Var<T> gather_rows(Tape<T>& tape, Var<T> x, std::vector<std::uint32_t> rows) {
  const auto& xv = tape.value(x);
  check_matrix(xv, "gather_rows input");
  detail::require(!rows.empty(), "gather_rows needs at least one row");
  const std::size_t n = xv.cols();
  auto y = Tensor<T>::matrix(rows.size(), n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    detail::require(rows[r] < xv.rows(), "gather_rows index out of range");
    std::copy_n(xv.data() + rows[r] * n, n, y.data() + r * n);
  }
  return tape.push(std::move(y), {x}, [x, rows = std::move(rows), n](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_target(x)) {
      for (std::size_t r = 0; r < rows.size(); ++r) {
        T* dst = gx->data() + rows[r] * n;
        const T* src = g.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
Var<T> concat_rows(Tape<T>& tape, Var<T> a, Var<T> b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  const std::size_t n = av.cols();
  detail::require(bv.cols() == n, "concat_rows column mismatch");
  const std::size_t ma = av.rows(), mb = bv.rows();
  auto y = Tensor<T>::matrix(ma + mb, n);
  std::copy_n(av.data(), ma * n, y.data());
  std::copy_n(bv.data(), mb * n, y.data() + ma * n);
  return tape.push(std::move(y), {a, b}, [a, b, ma, mb, n](Tape<T>& t, const Tensor<T>& g) {
    if (auto* ga = t.grad_target(a))
      for (std::size_t i = 0; i < ma * n; ++i) (*ga)[i] += g[i];
    if (auto* gb = t.grad_target(b))
      for (std::size_t i = 0; i < mb * n; ++i) (*gb)[i] += g[ma * n + i];
  });
}

template <typename T>
Var<T> concat_cols(Tape<T>& tape, const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols needs at least one input");
  const std::size_t m = tape.value(parts[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (auto p : parts) {
    const auto& v = tape.value(p);
    detail::require(v.rows() == m, "concat_cols row mismatch");
    widths.push_back(v.cols());
    total += v.cols();
  }
  auto y = Tensor<T>::matrix(m, total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = tape.value(parts[k]);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(v.data() + i * widths[k], widths[k], y.data() + i * total + off);
    off += widths[k];
  }
  return tape.push(std::move(y), std::span<const Var<T>>(parts),
                   [parts, widths, m, total](Tape<T>& t, const Tensor<T>& g) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < parts.size(); ++k) {
                       if (auto* gk = t.grad_target(parts[k])) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < widths[k]; ++j) (*gk)[i * widths[k] + j] += g[i * total + off + j];
                       }
                       off += widths[k];
                     }
                   });
}

// y = LayerNorm(x) * gamma + beta over the last axis, eps 1e-6.
template <typename T>
Var<T> layer_norm(Tape<T>& tape, Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-6)) {
  const auto& xv = tape.value(x);
  const auto& gv = tape.value(gamma);
  const auto& bv = tape.value(beta);
  const std::size_t m = xv.rows(), d = xv.cols();
  detail::require(d >= 1 && gv.size() == d && bv.size() == d, "layer_norm shape mismatch");
  Tensor<T> y({m, d});
  std::vector<T> xhat(m * d), rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * rstd[i];
      y[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  return tape.push(std::move(y), {x, gamma, beta},
                   [x, gamma, beta, m, d, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t,
                                                                                          const Tensor<T>& g) {
                     const auto& gv = t.value(gamma);
                     if (auto* gg = t.grad_target(gamma))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g[i * d + j] * xhat[i * d + j];
                     if (auto* gb = t.grad_target(beta))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[i * d + j];
                     if (auto* gx = t.grad_target(x)) {
                       for (std::size_t i = 0; i < m; ++i) {
                         T mean_dxhat = 0, mean_dxhat_xhat = 0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const T dxh = g[i * d + j] * gv[j];
                           mean_dxhat += dxh;
                           mean_dxhat_xhat += dxh * xhat[i * d + j];
                         }
                         mean_dxhat /= static_cast<T>(d);
                         mean_dxhat_xhat /= static_cast<T>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                           const T dxh = g[i * d + j] * gv[j];
                           (*gx)[i * d + j] += rstd[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
                         }
                       }
                     }
                   });
}

// Exact GELU: x * Phi(x).
template <typename T>
Var<T> gelu(Tape<T>& tape, Var<T> x) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.values()) v = T(0.5) * v * (T(1) + std::erf(v * (T(1) / std::numbers::sqrt2_v<T>)));
  return tape.push(std::move(y), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_target(x)) {
      const auto& xv = t.value(x);
      const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xv[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * (T(1) / std::numbers::sqrt2_v<T>)));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        (*gx)[i] += g[i] * (cdf + v * pdf);
      }
    }
  });
}

// Inverted dropout. Identity (and no node) when rate is 0 or rng is null.
template <typename T>
Var<T> dropout(Tape<T>& tape, Var<T> x, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  detail::require(rate < 1.0, "dropout rate must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> y = tape.value(x);
  std::vector<T> mask(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = uniform01(*rng) >= rate ? keep_scale : T(0);
    y[i] *= mask[i];
  }
  return tape.push(std::move(y), {x}, [x, mask = std::move(mask)](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_target(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
  });
}

template <typename T>
void softmax_inplace(T* row, std::size_t n) {
  T mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  T s = 0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    s += row[j];
  }
  const T inv = T(1) / s;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

template <typename T>
Var<T> softmax_rows(Tape<T>& tape, Var<T> x) {
  Tensor<T> y = tape.value(x);
  const std::size_t m = y.rows(), n = y.cols();
  for (std::size_t i = 0; i < m; ++i) softmax_inplace(y.data() + i * n, n);
  return tape.push(std::move(y), {x}, [x, m, n](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_target(x)) {
      // y is this node's value: recompute from x to avoid holding a copy.
      Tensor<T> y = t.value(x);
      for (std::size_t i = 0; i < m; ++i) {
        T* yi = y.data() + i * n;
        softmax_inplace(yi, n);
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += yi[j] * g[i * n + j];
        for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += yi[j] * (g[i * n + j] - dot);
      }
    }
  });
}

namespace kernels {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t j = 0; j < n; ++j) acc += a[j] * b[j];
  return acc;
}

// Columns [off, off + w) of x [s, d] transposed into out [w, s].
template <typename T>
void gather_head_t(const T* x, std::size_t s, std::size_t d, std::size_t off, std::size_t w, T* out) {
  for (std::size_t j = 0; j < s; ++j)
    for (std::size_t c = 0; c < w; ++c) out[c * s + j] = x[j * d + off + c];
}

}  // namespace kernels

// Multi-head scaled dot-product attention core. q, k, v are [S, d]; head h
// reads columns [h*d/H, (h+1)*d/H). Returns the concatenated head outputs
// [S, d]. Optional dropout acts on the attention weights.
template <typename T>
Var<T> attention(Tape<T>& tape, Var<T> q, Var<T> k, Var<T> v, std::size_t heads, double dropout_rate = 0.0,
                 std::mt19937_64* rng = nullptr, Tensor<T>* weights_out = nullptr) {
  const auto& qv = tape.value(q);
  const auto& kv = tape.value(k);
  const auto& vv = tape.value(v);
  check_matrix(qv, "attention query");
  detail::require(qv.same_shape(kv) && qv.same_shape(vv), "attention q/k/v shape mismatch");
  const std::size_t s = qv.rows(), d = qv.cols();
  detail::require(heads >= 1 && d % heads == 0,
                  "model dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const T scale_f = T(1) / std::sqrt(static_cast<T>(dh));
  const bool drop = dropout_rate > 0.0 && rng != nullptr;
  const T keep_scale = drop ? static_cast<T>(1.0 / (1.0 - dropout_rate)) : T(1);

  std::vector<T> probs(heads * s * s);
  std::vector<T> mask(drop ? heads * s * s : 0);
  auto out = Tensor<T>::matrix(s, d);
  std::vector<T> kt(dh * s), vt(dh * s), a_row(s);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    kernels::gather_head_t(kv.data(), s, d, off, dh, kt.data());
    kernels::gather_head_t(vv.data(), s, d, off, dh, vt.data());
    for (std::size_t i = 0; i < s; ++i) {
      T* p = probs.data() + (h * s + i) * s;
      const T* qi = qv.data() + i * d + off;
      std::fill(p, p + s, T(0));
      for (std::size_t c = 0; c < dh; ++c) {
        const T qc = qi[c] * scale_f;
        const T* kc = kt.data() + c * s;
        for (std::size_t j = 0; j < s; ++j) p[j] += qc * kc[j];
      }
      softmax_inplace(p, s);
      const T* a = p;
      if (drop) {
        T* m = mask.data() + (h * s + i) * s;
        for (std::size_t j = 0; j < s; ++j) {
          m[j] = uniform01(*rng) >= dropout_rate ? keep_scale : T(0);
          a_row[j] = p[j] * m[j];
        }
        a = a_row.data();
      }
      T* oi = out.data() + i * d + off;
      for (std::size_t c = 0; c < dh; ++c) oi[c] = kernels::dot(a, vt.data() + c * s, s);
    }
  }
  if (weights_out) *weights_out = Tensor<T>({heads, s, s}, probs);
  return tape.push(
      std::move(out), {q, k, v},
      [q, k, v, s, d, dh, heads, scale_f, drop, probs = std::move(probs), mask = std::move(mask)](
          Tape<T>& t, const Tensor<T>& g) {
        const auto& qv = t.value(q);
        const auto& kv = t.value(k);
        const auto& vv = t.value(v);
        auto* gq = t.grad_target(q);
        auto* gk = t.grad_target(k);
        auto* gv = t.grad_target(v);
        std::vector<T> kt(dh * s), vt(dh * s), gkt(dh * s), gvt(dh * s), da(s), ds(s), a_row(s);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          kernels::gather_head_t(kv.data(), s, d, off, dh, kt.data());
          kernels::gather_head_t(vv.data(), s, d, off, dh, vt.data());
          std::fill(gkt.begin(), gkt.end(), T(0));
          std::fill(gvt.begin(), gvt.end(), T(0));
          for (std::size_t i = 0; i < s; ++i) {
            const T* p = probs.data() + (h * s + i) * s;
            const T* m = drop ? mask.data() + (h * s + i) * s : nullptr;
            const T* gi = g.data() + i * d + off;
            // dA[i, :] = dO_i V^T;  dV^T[c, :] += dO_i[c] A[i, :]
            std::fill(da.begin(), da.end(), T(0));
            for (std::size_t c = 0; c < dh; ++c) {
              const T gc = gi[c];
              const T* vc = vt.data() + c * s;
              for (std::size_t j = 0; j < s; ++j) da[j] += gc * vc[j];
            }
            if (m) {
              for (std::size_t j = 0; j < s; ++j) {
                da[j] *= m[j];
                a_row[j] = p[j] * m[j];
              }
            }
            if (gv) {
              const T* a = m ? a_row.data() : p;
              for (std::size_t c = 0; c < dh; ++c) {
                const T gc = gi[c];
                T* gvc = gvt.data() + c * s;
                for (std::size_t j = 0; j < s; ++j) gvc[j] += gc * a[j];
              }
            }
            const T pd = kernels::dot(p, da.data(), s);
            for (std::size_t j = 0; j < s; ++j) ds[j] = p[j] * (da[j] - pd) * scale_f;
            if (gq) {
              T* gqi = gq->data() + i * d + off;
              for (std::size_t c = 0; c < dh; ++c) gqi[c] += kernels::dot(ds.data(), kt.data() + c * s, s);
            }
            if (gk) {
              const T* qi = qv.data() + i * d + off;
              for (std::size_t c = 0; c < dh; ++c) {
                const T qc = qi[c];
                T* gkc = gkt.data() + c * s;
                for (std::size_t j = 0; j < s; ++j) gkc[j] += qc * ds[j];
              }
            }
          }
          for (std::size_t j = 0; j < s; ++j) {
            for (std::size_t c = 0; c < dh; ++c) {
              if (gk) (*gk)[j * d + off + c] += gkt[c * s + j];
              if (gv) (*gv)[j * d + off + c] += gvt[c * s + j];
            }
          }
        }
      });
}

// mean((x - target)^2) over all elements.
template <typename T>
Var<T> mse(Tape<T>& tape, Var<T> x, const Tensor<T>& target) {
  const auto& xv = tape.value(x);
  detail::require(xv.same_shape(target), "mse shape mismatch: " + xv.shape_string() + " vs " + target.shape_string());
  detail::require(!xv.empty(), "mse over an empty tensor");
  T acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T diff = xv[i] - target[i];
    acc += diff * diff;
  }
  const T n = static_cast<T>(xv.size());
  return tape.push(Tensor<T>::scalar(acc / n), {x}, [x, target, n](Tape<T>& t, const Tensor<T>& g) {
    if (auto* gx = t.grad_target(x)) {
      const auto& xv = t.value(x);
      const T c = T(2) * g[0] / n;
      for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += c * (xv[i] - target[i]);
    }
  });
}

}  // namespace ad
}  // namespace s2vec
