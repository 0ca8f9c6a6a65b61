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

// Masked-reconstruction pretraining loop.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "s2vec/error.hpp"
#include "s2vec/mae/config.hpp"
#include "s2vec/mae/model.hpp"
#include "s2vec/numerics/optim.hpp"
#include "s2vec/raster.hpp"
#include "s2vec/util/hash.hpp"
#include "s2vec/util/parallel.hpp"

namespace s2vec::mae {

// Streaming shuffle: fill a buffer of `buffer` items, then repeatedly emit a
// random buffered item and replace it with the next input; drain at the end.
inline std::vector<std::size_t> shuffle_buffer_order(std::size_t n, std::size_t buffer, std::mt19937_64& rng) {
  detail::require(buffer > 0, "shuffle buffer must be positive");
  std::vector<std::size_t> out;
  out.reserve(n);
  std::vector<std::size_t> buf;
  buf.reserve(std::min(n, buffer));
  for (std::size_t i = 0; i < n; ++i) {
    if (buf.size() < buffer) {
      buf.push_back(i);
      continue;
    }
    const std::size_t j = rng() % buf.size();
    out.push_back(buf[j]);
    buf[j] = i;
  }
  while (!buf.empty()) {
    const std::size_t j = rng() % buf.size();
    out.push_back(buf[j]);
    buf[j] = buf.back();
    buf.pop_back();
  }
  return out;
}

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

struct PretrainOptions {
  std::size_t threads = 1;
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

template <std::floating_point T>
struct PretrainResult {
  ParamSet<T> params;
  std::vector<double> loss_history;  // per-epoch mean of per-image masked losses
  OptimizerState<T> optimizer;
};

// Mask and dropout stream of one image in one epoch.
inline std::mt19937_64 image_rng(std::uint64_t seed, std::size_t epoch, std::size_t image) {
  return std::mt19937_64(derive_seed(seed, 1 + epoch, image, 0x6d61736bULL));
}

template <std::floating_point T>
PretrainResult<T> pretrain(const RasterDataset& ds, const MaeConfig& cfg, std::uint64_t seed,
                           const PretrainOptions& opts = {}) {
  cfg.validate();
  detail::require(!ds.images.empty(), "pretraining needs a nonempty dataset");
  detail::require(static_cast<int>(ds.grid()) == cfg.grid, "dataset grid " + std::to_string(ds.grid()) +
                                                               " does not match config grid " +
                                                               std::to_string(cfg.grid));
  detail::require(ds.feature_dim == cfg.feature_dim, "dataset has " + std::to_string(ds.feature_dim) +
                                                         " features, config expects " +
                                                         std::to_string(cfg.feature_dim));
  PretrainResult<T> res;
  res.params = init_params<T>(cfg, seed);
  res.optimizer = OptimizerState<T>::for_params(res.params.values(), cfg.adamw);

  const std::size_t n = ds.images.size();
  const std::size_t per_epoch = steps_per_epoch(n, cfg.batch);
  const LrSchedule sched{cfg.initial_lr, cfg.lr_alpha, static_cast<std::int64_t>(cfg.epochs * per_epoch)};
  const std::size_t max_chunks = chunk_count(cfg.batch, opts.threads);
  std::vector<std::vector<Tensor<T>>> chunk_grads(max_chunks, res.params.zero_grads());
  std::vector<double> chunk_loss(max_chunks);

  struct Item {
    std::size_t image;
    std::mt19937_64 rng;
    MaskPlan plan;
    std::vector<std::uint32_t> slots;
  };

  std::int64_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(seed, 1 + epoch, 0, 0x73687566ULL));
    const auto order = shuffle_buffer_order(n, cfg.shuffle_buffer, shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t epoch_items = 0;
    for (std::size_t step = 0; step < per_epoch; ++step) {
      const std::size_t begin = step * cfg.batch;
      const std::size_t end = std::min(n, begin + cfg.batch);
      std::vector<Item> items;
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t idx = order[k];
        Item it{idx, image_rng(seed, epoch, idx), {}, {}};
        it.plan = random_mask(cfg.patches(), cfg.mask_ratio, it.rng);
        it.slots = loss_slots(it.plan, ds.images[idx].presence, cfg.exclude_absent);
        if (!it.slots.empty()) items.push_back(std::move(it));
      }
      if (items.empty()) {
        ++global_step;
        continue;
      }
      const std::size_t chunks = chunk_count(items.size(), opts.threads);
      for (std::size_t c = 0; c < chunks; ++c) {
        for (auto& g : chunk_grads[c]) g.fill(T(0));
        chunk_loss[c] = 0.0;
      }
      const T seed_grad = T(1) / static_cast<T>(items.size());
      try {
        parallel_chunks(items.size(), opts.threads, [&](std::size_t c, std::size_t b, std::size_t e) {
          for (std::size_t k = b; k < e; ++k) {
            Item& it = items[k];
            const auto target = image_tensor<T>(ds.images[it.image]);
            Tape<T> tape;
            const auto m = bind_mae(tape, res.params, cfg, &chunk_grads[c]);
            const auto img = tape.constant(target);
            std::mt19937_64* rng = cfg.dropout > 0.0 ? &it.rng : nullptr;
            const auto lat = encode_visible(tape, m, cfg, img, it.plan, rng);
            const auto rec = decode_reconstruct(tape, m, cfg, lat, it.plan, rng);
            const auto loss = masked_mse_loss(tape, rec, target, it.slots);
            const double lv = static_cast<double>(tape.value(loss)[0]);
            if (!std::isfinite(lv)) {
              throw RuntimeFailure("non-finite loss on image " + ds.images[it.image].parent.token());
            }
            chunk_loss[c] += lv;
            tape.backward(loss, seed_grad);
          }
        });
      } catch (const RuntimeFailure& e) {
        throw RuntimeFailure("pretraining diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                             std::to_string(global_step) + ": " + e.what());
      }
      auto& grads = chunk_grads[0];
      for (std::size_t c = 1; c < chunks; ++c) {
        for (std::size_t p = 0; p < grads.size(); ++p) {
          auto dst = grads[p].values();
          auto src = chunk_grads[c][p].values();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
      }
      for (std::size_t c = 0; c < chunks; ++c) epoch_loss += chunk_loss[c];
      epoch_items += items.size();
      for (const auto& g : grads) {
        if (!g.all_finite()) {
          throw RuntimeFailure("pretraining diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                               std::to_string(global_step) + ": non-finite gradient");
        }
      }
      clip_global_norm(grads, cfg.clip_norm);
      adamw_step(res.params.values(), grads, res.optimizer, cosine_lr(global_step, sched));
      ++global_step;
    }
    detail::require<RuntimeFailure>(epoch_items > 0, "no image contributed to the loss in epoch " +
                                                         std::to_string(epoch + 1));
    const double mean = epoch_loss / static_cast<double>(epoch_items);
    res.loss_history.push_back(mean);
    if (opts.on_epoch) opts.on_epoch(epoch + 1, mean);
  }
  return res;
}

// Masked MSE of predicting each slot by the per-feature mean of the dataset,
// under the same per-(image, epoch) masks pretrain would draw in `epoch`.
inline double mean_predictor_loss(const RasterDataset& ds, const MaeConfig& cfg, std::uint64_t seed,
                                  std::size_t epoch) {
  const std::size_t f = ds.feature_dim;
  std::vector<double> mean(f, 0.0);
  std::size_t rows = 0;
  for (const auto& img : ds.images) {
    for (std::size_t s = 0; s < img.patches(); ++s) {
      auto p = img.patch(s);
      for (std::size_t k = 0; k < f; ++k) mean[k] += p[k];
      ++rows;
    }
  }
  for (auto& m : mean) m /= static_cast<double>(rows);
  double total = 0.0;
  std::size_t items = 0;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    auto rng = image_rng(seed, epoch, i);
    const auto plan = random_mask(cfg.patches(), cfg.mask_ratio, rng);
    const auto slots = loss_slots(plan, ds.images[i].presence, cfg.exclude_absent);
    if (slots.empty()) continue;
    double acc = 0.0;
    for (auto s : slots) {
      auto p = ds.images[i].patch(s);
      for (std::size_t k = 0; k < f; ++k) acc += (p[k] - mean[k]) * (p[k] - mean[k]);
    }
    total += acc / static_cast<double>(slots.size() * f);
    ++items;
  }
  detail::require(items > 0, "no image has a loss slot");
  return total / static_cast<double>(items);
}

}  // namespace s2vec::mae
