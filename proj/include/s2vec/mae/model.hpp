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

// Masked autoencoder over patch-grid images: parameters, masking, and the
// encoder/decoder forward passes on the autodiff tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "s2vec/error.hpp"
#include "s2vec/mae/config.hpp"
#include "s2vec/numerics/autodiff.hpp"
#include "s2vec/numerics/layers.hpp"
#include "s2vec/numerics/params.hpp"
#include "s2vec/raster.hpp"

namespace s2vec::mae {

namespace init_detail {

inline double truncated_normal(std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const double z = n(rng);
    if (std::abs(z) <= 2.0) return z * stddev;
  }
}

template <std::floating_point T>
Tensor<T> trunc_normal(std::vector<std::size_t> shape, std::mt19937_64& rng, double stddev = 0.02) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(truncated_normal(rng, stddev));
  return t;
}

template <std::floating_point T>
void add_linear(ParamSet<T>& p, const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  p.add(prefix + ".w", trunc_normal<T>({in, out}, rng));
  p.add(prefix + ".b", Tensor<T>::vector(out));
}

template <std::floating_point T>
void add_norm(ParamSet<T>& p, const std::string& prefix, std::size_t dim) {
  p.add(prefix + ".gamma", Tensor<T>::vector(dim, T(1)));
  p.add(prefix + ".beta", Tensor<T>::vector(dim));
}

template <std::floating_point T>
void add_block(ParamSet<T>& p, const std::string& prefix, std::size_t dim, std::mt19937_64& rng) {
  add_norm(p, prefix + ".ln1", dim);
  for (const char* n : {".attn.q", ".attn.k", ".attn.v", ".attn.out"}) add_linear(p, prefix + n, dim, dim, rng);
  p.add(prefix + ".ln2.gamma", Tensor<T>::vector(dim, T(1)));
  p.add(prefix + ".ln2.beta", Tensor<T>::vector(dim));
  add_linear(p, prefix + ".mlp.fc1", dim, 4 * dim, rng);
  add_linear(p, prefix + ".mlp.fc2", 4 * dim, dim, rng);
}

}  // namespace init_detail

inline std::string enc_block_name(std::size_t i) { return "enc.block" + std::to_string(i); }
inline std::string dec_block_name(std::size_t i) { return "dec.block" + std::to_string(i); }

// Weights and positional tables ~ N(0, 0.02) truncated at 2 sigma; biases,
// LayerNorm shifts and the mask token start at zero; LayerNorm gains at one.
template <std::floating_point T>
ParamSet<T> init_params(const MaeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  using namespace init_detail;
  std::mt19937_64 rng(seed);
  const std::size_t n = cfg.patches();
  ParamSet<T> p;
  add_linear(p, "patch", cfg.feature_dim, cfg.encoder_dim, rng);
  p.add("enc.pos", trunc_normal<T>({n, cfg.encoder_dim}, rng));
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) add_block(p, enc_block_name(i), cfg.encoder_dim, rng);
  if (cfg.final_norm) add_norm(p, "enc.norm", cfg.encoder_dim);
  add_linear(p, "dec.embed", cfg.encoder_dim, cfg.decoder_dim, rng);
  p.add("dec.mask_token", Tensor<T>::vector(cfg.decoder_dim));
  p.add("dec.pos", trunc_normal<T>({n, cfg.decoder_dim}, rng));
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) add_block(p, dec_block_name(i), cfg.decoder_dim, rng);
  if (cfg.final_norm) add_norm(p, "dec.norm", cfg.decoder_dim);
  add_linear(p, "head", cfg.decoder_dim, cfg.feature_dim, rng);
  return p;
}

// Throws unless every tensor has the shape cfg implies and is finite.
template <std::floating_point T>
void check_params(const ParamSet<T>& params, const MaeConfig& cfg) {
  const auto ref = init_params<T>(cfg, 0);
  detail::require(ref.names() == params.names(), "parameter set does not match the MAE config");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    detail::require(ref[i].shape() == params[i].shape(), "parameter " + params.name(i) + " has shape " +
                                                            params[i].shape_string() + ", expected " +
                                                            ref[i].shape_string());
    detail::require(params[i].all_finite(), "parameter " + params.name(i) + " is not finite");
  }
}

struct MaskPlan {
  std::vector<std::uint32_t> visible;  // ascending
  std::vector<std::uint32_t> masked;   // ascending

  std::size_t patches() const { return visible.size() + masked.size(); }

  void validate(std::size_t n) const {
    detail::require(patches() == n, "mask plan covers " + std::to_string(patches()) + " patches, image has " +
                                        std::to_string(n));
    std::vector<std::uint8_t> seen(n, 0);
    for (auto list : {&visible, &masked}) {
      for (auto i : *list) {
        detail::require(i < n && !seen[i], "mask plan indices overlap or fall outside the grid");
        seen[i] = 1;
      }
    }
    detail::require(!visible.empty(), "mask plan has no visible patches");
  }
};

inline std::size_t masked_count(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
}

// Uniform subset without replacement via a partial Fisher-Yates shuffle.
inline MaskPlan random_mask(std::size_t n, double ratio, std::mt19937_64& rng) {
  detail::require(ratio > 0.0 && ratio < 1.0, "mask ratio must lie in (0, 1)");
  const std::size_t m = masked_count(n, ratio);
  detail::require(m > 0 && m < n, "mask ratio " + std::to_string(ratio) + " over " + std::to_string(n) +
                                      " patches leaves no visible or no masked patch");
  std::vector<std::uint32_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(perm[i], perm[j]);
  }
  MaskPlan plan;
  plan.masked.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m));
  plan.visible.assign(perm.begin() + static_cast<std::ptrdiff_t>(m), perm.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

inline MaskPlan all_visible(std::size_t n) {
  MaskPlan plan;
  plan.visible.resize(n);
  for (std::size_t i = 0; i < n; ++i) plan.visible[i] = static_cast<std::uint32_t>(i);
  return plan;
}

template <std::floating_point T>
Tensor<T> image_tensor(const RasterImage& img) {
  return Tensor<T>({img.patches(), img.feature_dim}, std::vector<T>(img.pixels.begin(), img.pixels.end()));
}

template <typename T>
struct MaeVars {
  ad::LinearVars<T> patch;
  ad::Var<T> enc_pos;
  std::vector<ad::BlockVars<T>> enc;
  std::optional<std::pair<ad::Var<T>, ad::Var<T>>> enc_norm;
  ad::LinearVars<T> dec_embed;
  ad::Var<T> mask_token;
  ad::Var<T> dec_pos;
  std::vector<ad::BlockVars<T>> dec;
  std::optional<std::pair<ad::Var<T>, ad::Var<T>>> dec_norm;
  ad::LinearVars<T> head;
};

template <typename T, typename Get>
MaeVars<T> make_mae_vars(const MaeConfig& cfg, Get&& get) {
  MaeVars<T> m;
  m.patch = ad::make_linear<T>(get, "patch");
  m.enc_pos = get("enc.pos");
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) m.enc.push_back(ad::make_block<T>(get, enc_block_name(i)));
  if (cfg.final_norm) m.enc_norm.emplace(get("enc.norm.gamma"), get("enc.norm.beta"));
  m.dec_embed = ad::make_linear<T>(get, "dec.embed");
  m.mask_token = get("dec.mask_token");
  m.dec_pos = get("dec.pos");
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) m.dec.push_back(ad::make_block<T>(get, dec_block_name(i)));
  if (cfg.final_norm) m.dec_norm.emplace(get("dec.norm.gamma"), get("dec.norm.beta"));
  m.head = ad::make_linear<T>(get, "head");
  return m;
}

// `grads` may be null for inference.
template <typename T>
MaeVars<T> bind_mae(Tape<T>& tape, const ParamSet<T>& params, const MaeConfig& cfg,
                    std::type_identity_t<std::vector<Tensor<T>>>* grads) {
  return make_mae_vars<T>(cfg, ad::param_binder(tape, params, grads));
}

// Visible latents [V, encoder_dim] in plan.visible order. A null rng runs
// in eval mode (no dropout).
template <typename T>
ad::Var<T> encode_visible(Tape<T>& tape, const MaeVars<T>& m, const MaeConfig& cfg, ad::Var<T> image,
                          const MaskPlan& plan, std::mt19937_64* rng = nullptr) {
  const auto& iv = tape.value(image);
  detail::require(iv.rows() == cfg.patches() && iv.cols() == cfg.feature_dim,
                  "image shape " + iv.shape_string() + " does not match grid " + std::to_string(cfg.grid) +
                      " x features " + std::to_string(cfg.feature_dim));
  plan.validate(cfg.patches());
  ad::Var<T> h = ad::gather_rows(tape, image, plan.visible);
  h = ad::apply_linear(tape, h, m.patch);
  h = ad::add(tape, h, ad::gather_rows(tape, m.enc_pos, plan.visible));
  for (const auto& b : m.enc) h = ad::transformer_block(tape, h, b, cfg.heads, cfg.dropout, rng);
  if (m.enc_norm) h = ad::layer_norm(tape, h, m.enc_norm->first, m.enc_norm->second);
  return h;
}

// Reconstruction [G^2, feature_dim] in grid-slot order.
template <typename T>
ad::Var<T> decode_reconstruct(Tape<T>& tape, const MaeVars<T>& m, const MaeConfig& cfg, ad::Var<T> latents,
                              const MaskPlan& plan, std::mt19937_64* rng = nullptr) {
  const auto& lv = tape.value(latents);
  plan.validate(cfg.patches());
  detail::require(lv.rows() == plan.visible.size() && lv.cols() == cfg.encoder_dim,
                  "latents " + lv.shape_string() + " do not match the plan's " + std::to_string(plan.visible.size()) +
                      " visible patches");
  ad::Var<T> d = ad::apply_linear(tape, latents, m.dec_embed);
  d = ad::concat_rows(tape, d, m.mask_token);
  const auto token_row = static_cast<std::uint32_t>(plan.visible.size());
  std::vector<std::uint32_t> source(cfg.patches(), token_row);
  for (std::size_t k = 0; k < plan.visible.size(); ++k) source[plan.visible[k]] = static_cast<std::uint32_t>(k);
  ad::Var<T> h = ad::gather_rows(tape, d, std::move(source));
  h = ad::add(tape, h, m.dec_pos);
  for (const auto& b : m.dec) h = ad::transformer_block(tape, h, b, cfg.heads, cfg.dropout, rng);
  if (m.dec_norm) h = ad::layer_norm(tape, h, m.dec_norm->first, m.dec_norm->second);
  return ad::apply_linear(tape, h, m.head);
}

// Slots the loss averages over: the masked slots, optionally restricted to
// those with a source cell.
inline std::vector<std::uint32_t> loss_slots(const MaskPlan& plan, std::span<const std::uint8_t> presence = {},
                                             bool exclude_absent = false) {
  if (!exclude_absent) return plan.masked;
  detail::require(presence.size() == plan.patches(), "presence mask size mismatch");
  std::vector<std::uint32_t> out;
  for (auto s : plan.masked)
    if (presence[s]) out.push_back(s);
  return out;
}

// Mean squared error over (loss slots x features).
template <typename T>
ad::Var<T> masked_mse_loss(Tape<T>& tape, ad::Var<T> recon, const Tensor<T>& target,
                           const std::vector<std::uint32_t>& slots) {
  const auto& rv = tape.value(recon);
  detail::require(rv.rows() == target.rows() && rv.cols() == target.cols(),
                  "reconstruction " + rv.shape_string() + " vs target " + target.shape_string());
  detail::require(!slots.empty(), "masked loss over an empty set of patches");
  Tensor<T> picked = Tensor<T>::matrix(slots.size(), target.cols());
  for (std::size_t r = 0; r < slots.size(); ++r) {
    detail::require(slots[r] < target.rows(), "loss slot out of range");
    std::copy_n(target.data() + slots[r] * target.cols(), target.cols(), picked.data() + r * target.cols());
  }
  return ad::mse(tape, ad::gather_rows(tape, recon, slots), picked);
}

// Tensor-level conveniences for inference and tests.

template <std::floating_point T>
Tensor<T> encode_visible(const Tensor<T>& image, const MaskPlan& plan, const ParamSet<T>& params,
                         const MaeConfig& cfg, std::mt19937_64* rng = nullptr) {
  Tape<T> tape;
  const auto m = bind_mae(tape, params, cfg, nullptr);
  return tape.value(encode_visible(tape, m, cfg, tape.constant(image), plan, rng));
}

template <std::floating_point T>
Tensor<T> decode_reconstruct(const Tensor<T>& latents, const MaskPlan& plan, const ParamSet<T>& params,
                             const MaeConfig& cfg, std::mt19937_64* rng = nullptr) {
  Tape<T> tape;
  const auto m = bind_mae(tape, params, cfg, nullptr);
  return tape.value(decode_reconstruct(tape, m, cfg, tape.constant(latents), plan, rng));
}

template <std::floating_point T>
double masked_mse_loss(const Tensor<T>& recon, const Tensor<T>& target, const MaskPlan& plan) {
  Tape<T> tape;
  return static_cast<double>(tape.value(masked_mse_loss(tape, tape.constant(recon), target, plan.masked))[0]);
}

}  // namespace s2vec::mae
