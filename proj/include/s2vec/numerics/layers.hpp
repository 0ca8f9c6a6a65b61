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

// Transformer building blocks composed from tape ops.

#include <random>
#include <string>
#include <type_traits>

#include "s2vec/numerics/autodiff.hpp"
#include "s2vec/numerics/params.hpp"

namespace s2vec::ad {

template <typename T>
struct LinearVars {
  Var<T> w, b;
};

template <typename T>
struct AttentionVars {
  LinearVars<T> q, k, v, out;
};

template <typename T>
struct BlockVars {
  Var<T> ln1_gamma, ln1_beta;
  AttentionVars<T> attn;
  Var<T> ln2_gamma, ln2_beta;
  LinearVars<T> fc1, fc2;
};

// Assembles vars from get(name), which maps a parameter name to a Var.
template <typename T, typename Get>
LinearVars<T> make_linear(Get&& get, const std::string& prefix) {
  return {get(prefix + ".w"), get(prefix + ".b")};
}

template <typename T, typename Get>
BlockVars<T> make_block(Get&& get, const std::string& prefix) {
  BlockVars<T> b;
  b.ln1_gamma = get(prefix + ".ln1.gamma");
  b.ln1_beta = get(prefix + ".ln1.beta");
  b.attn.q = make_linear<T>(get, prefix + ".attn.q");
  b.attn.k = make_linear<T>(get, prefix + ".attn.k");
  b.attn.v = make_linear<T>(get, prefix + ".attn.v");
  b.attn.out = make_linear<T>(get, prefix + ".attn.out");
  b.ln2_gamma = get(prefix + ".ln2.gamma");
  b.ln2_beta = get(prefix + ".ln2.beta");
  b.fc1 = make_linear<T>(get, prefix + ".mlp.fc1");
  b.fc2 = make_linear<T>(get, prefix + ".mlp.fc2");
  return b;
}

// Binds parameters from a set onto the tape. `grads` may be null to bind
// them as constants.
template <typename T>
auto param_binder(Tape<T>& tape, const ParamSet<T>& params, std::vector<Tensor<T>>* grads) {
  return [&tape, &params, grads](const std::string& n) {
    const std::size_t i = params.index(n);
    return tape.param(params[i], grads ? &(*grads)[i] : nullptr);
  };
}

template <typename T>
LinearVars<T> bind_linear(Tape<T>& tape, const ParamSet<T>& params, std::type_identity_t<std::vector<Tensor<T>>>* grads,
                          const std::string& prefix) {
  return make_linear<T>(param_binder(tape, params, grads), prefix);
}

template <typename T>
BlockVars<T> bind_block(Tape<T>& tape, const ParamSet<T>& params, std::type_identity_t<std::vector<Tensor<T>>>* grads,
                        const std::string& prefix) {
  return make_block<T>(param_binder(tape, params, grads), prefix);
}

template <typename T>
Var<T> apply_linear(Tape<T>& tape, Var<T> x, const LinearVars<T>& l) {
  return linear(tape, x, l.w, l.b);
}

// Standard multi-head self-attention: per-head scaled dot products over
// projected queries/keys/values, then the output projection.
template <typename T>
Var<T> multihead_attention(Tape<T>& tape, Var<T> x, const AttentionVars<T>& p, std::size_t heads,
                           double dropout_rate = 0.0, std::mt19937_64* rng = nullptr) {
  const Var<T> q = apply_linear(tape, x, p.q);
  const Var<T> k = apply_linear(tape, x, p.k);
  const Var<T> v = apply_linear(tape, x, p.v);
  const Var<T> ctx = attention(tape, q, k, v, heads, dropout_rate, rng);
  return apply_linear(tape, ctx, p.out);
}

// Pre-norm residual block: x + MHA(LN(x)), then x + MLP(LN(x)) with a GELU
// hidden layer. Dropout hits attention weights and MLP hidden activations.
template <typename T>
Var<T> transformer_block(Tape<T>& tape, Var<T> x, const BlockVars<T>& b, std::size_t heads, double dropout_rate,
                         std::mt19937_64* rng) {
  Var<T> h = layer_norm(tape, x, b.ln1_gamma, b.ln1_beta);
  h = multihead_attention(tape, h, b.attn, heads, dropout_rate, rng);
  x = add(tape, x, h);
  h = layer_norm(tape, x, b.ln2_gamma, b.ln2_beta);
  h = gelu(tape, apply_linear(tape, h, b.fc1));
  h = dropout(tape, h, dropout_rate, rng);
  h = apply_linear(tape, h, b.fc2);
  return add(tape, x, h);
}

}  // namespace s2vec::ad
