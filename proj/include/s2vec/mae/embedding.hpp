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

// Per-cell embedding tables and their extraction from a trained model.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "s2vec/error.hpp"
#include "s2vec/ingest.hpp"
#include "s2vec/mae/config.hpp"
#include "s2vec/mae/model.hpp"
#include "s2vec/raster.hpp"
#include "s2vec/s2geom.hpp"
#include "s2vec/util/binary_io.hpp"
#include "s2vec/util/parallel.hpp"

namespace s2vec {

struct EmbeddingProvenance {
  std::string config_hash;
  std::string checkpoint_hash;
};

// Cell raw id -> float vector of length dim, kept sorted by id.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::vector<std::uint64_t>& ids() const { return ids_; }
  const std::vector<float>& data() const { return data_; }

  std::span<const float> row(std::size_t i) const { return std::span<const float>(data_).subspan(i * dim_, dim_); }

  const float* find(std::uint64_t id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) return nullptr;
    return data_.data() + (it - ids_.begin()) * dim_;
  }
  bool contains(std::uint64_t id) const { return find(id) != nullptr; }

  std::span<const float> at(std::uint64_t id) const {
    const float* p = find(id);
    if (!p) throw ValidationError("no embedding for cell " + CellId::from_raw(id).token());
    return {p, dim_};
  }

  // Entries may arrive in any order; call finalize() before lookups.
  void append(std::uint64_t id, std::span<const float> v) {
    detail::require(v.size() == dim_, "embedding length " + std::to_string(v.size()) + " != table dim " +
                                          std::to_string(dim_));
    ids_.push_back(id);
    data_.insert(data_.end(), v.begin(), v.end());
  }

  void finalize() {
    std::vector<std::size_t> order(ids_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ids_[a] < ids_[b]; });
    std::vector<std::uint64_t> ids(ids_.size());
    std::vector<float> data(data_.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      ids[k] = ids_[order[k]];
      if (k > 0) {
        detail::require(ids[k] != ids[k - 1], "duplicate embedding for cell " + CellId::from_raw(ids[k]).token());
      }
      std::copy_n(data_.data() + order[k] * dim_, dim_, data.data() + k * dim_);
    }
    ids_ = std::move(ids);
    data_ = std::move(data);
  }

  EmbeddingProvenance provenance;

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.data_ == b.data_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::uint64_t> ids_;
  std::vector<float> data_;
};

inline void write_embedding_table(std::ostream& out, const EmbeddingTable& t) {
  detail::require(std::is_sorted(t.ids().begin(), t.ids().end()), "embedding table is not finalized");
  io::write_magic(out, "S2VE");
  io::write_pod<std::uint16_t>(out, 1);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
  io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) {
    io::write_pod<std::uint64_t>(out, t.ids()[i]);
    io::write_span<float>(out, t.row(i));
  }
}

inline EmbeddingTable read_embedding_table(std::istream& in) {
  io::expect_magic(in, "S2VE");
  const auto version = io::read_pod<std::uint16_t>(in);
  detail::require(version == 1, "unsupported embedding table version " + std::to_string(version));
  const auto dim = io::read_pod<std::uint32_t>(in);
  const auto count = io::read_pod<std::uint64_t>(in);
  detail::require(dim > 0, "embedding table has zero dim");
  EmbeddingTable t(dim);
  std::vector<float> v(dim);
  std::uint64_t prev = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id = io::read_pod<std::uint64_t>(in);
    detail::require(CellId::from_raw(id).is_valid(), "invalid cell id in embedding table");
    detail::require(i == 0 || id > prev, "embedding table entries not sorted by id");
    prev = id;
    io::read_span<float>(in, v);
    t.append(id, v);
  }
  return t;
}

inline void save_embedding_table(const std::string& path, const EmbeddingTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write embedding table: " + path);
  write_embedding_table(out, t);
}

inline EmbeddingTable load_embedding_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open embedding table: " + path);
  return read_embedding_table(in);
}

namespace mae {

// Phi(s) = apply_norm(Theta(s)) W_p + b_p: the patch projection alone.
template <std::floating_point T>
EmbeddingTable extract_embeddings(std::span<const CellFeatures> cells, const NormStats& stats,
                                  const ParamSet<T>& params, std::size_t threads = 1) {
  const auto& w = params["patch.w"];
  const auto& b = params["patch.b"];
  const std::size_t f = w.dim(0), d = w.dim(1);
  detail::require(stats.dim() == f, "normalization stats have " + std::to_string(stats.dim()) +
                                        " features, patch projection expects " + std::to_string(f));
  std::vector<float> out(cells.size() * d);
  std::vector<std::uint64_t> ids(cells.size());
  parallel_chunks(cells.size(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<double> acc(d);
    for (std::size_t c = begin; c < end; ++c) {
      detail::require(cells[c].counts.size() == f, "cell " + cells[c].token + " has " +
                                                       std::to_string(cells[c].counts.size()) +
                                                       " features, expected " + std::to_string(f));
      ids[c] = cells[c].cell().raw();
      const auto x = apply_norm(cells[c], stats);
      for (std::size_t j = 0; j < d; ++j) acc[j] = static_cast<double>(b[j]);
      for (std::size_t i = 0; i < f; ++i) {
        const double xi = x[i];
        const T* wr = w.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) acc[j] += xi * static_cast<double>(wr[j]);
      }
      for (std::size_t j = 0; j < d; ++j) out[c * d + j] = static_cast<float>(acc[j]);
    }
  });
  EmbeddingTable t(d);
  for (std::size_t c = 0; c < cells.size(); ++c) t.append(ids[c], std::span<const float>(out).subspan(c * d, d));
  t.finalize();
  return t;
}

// Slot -> child cell of one image.
inline std::vector<CellId> slot_cells(CellId parent, int patch_level) {
  const int g = grid_side(parent.level(), patch_level);
  std::vector<CellId> out(static_cast<std::size_t>(g) * g);
  for (CellId c : parent.descendants(patch_level)) {
    const GridPos p = grid_position(c, parent);
    out[static_cast<std::size_t>(p.row) * g + p.col] = c;
  }
  return out;
}

// Full encoder over every unmasked image, in eval mode. Emits one latent per
// present slot, or with mean_pool one mean latent per image keyed by parent.
template <std::floating_point T>
EmbeddingTable extract_contextual_embeddings(const RasterDataset& ds, const ParamSet<T>& params,
                                             const MaeConfig& cfg, bool mean_pool = false, std::size_t threads = 1) {
  detail::require(ds.grid() == cfg.grid && ds.feature_dim == cfg.feature_dim,
                  "dataset shape does not match the model config");
  const std::size_t d = cfg.encoder_dim;
  std::vector<std::vector<std::pair<std::uint64_t, std::vector<float>>>> per_image(ds.images.size());
  const auto plan = all_visible(cfg.patches());
  parallel_chunks(ds.images.size(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& img = ds.images[i];
      const auto lat = encode_visible(image_tensor<T>(img), plan, params, cfg);
      if (mean_pool) {
        std::vector<double> acc(d, 0.0);
        for (std::size_t s = 0; s < lat.rows(); ++s)
          for (std::size_t j = 0; j < d; ++j) acc[j] += lat.at(s, j);
        std::vector<float> v(d);
        for (std::size_t j = 0; j < d; ++j) v[j] = static_cast<float>(acc[j] / static_cast<double>(lat.rows()));
        per_image[i].emplace_back(img.parent.raw(), std::move(v));
        continue;
      }
      const auto cells = slot_cells(img.parent, ds.patch_level);
      for (std::size_t s = 0; s < img.patches(); ++s) {
        if (!img.presence[s]) continue;
        std::vector<float> v(d);
        for (std::size_t j = 0; j < d; ++j) v[j] = static_cast<float>(lat.at(s, j));
        per_image[i].emplace_back(cells[s].raw(), std::move(v));
      }
    }
  });
  EmbeddingTable t(d);
  for (const auto& entries : per_image)
    for (const auto& [id, v] : entries) t.append(id, v);
  t.finalize();
  return t;
}

}  // namespace mae
}  // namespace s2vec
