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

// Rasterization of patch-level cells into one G x G x F image per
// image-level parent cell.

#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "s2vec/error.hpp"
#include "s2vec/ingest.hpp"
#include "s2vec/s2geom.hpp"
#include "s2vec/util/binary_io.hpp"
#include "s2vec/util/parallel.hpp"

namespace s2vec {

struct RasterImage {
  CellId parent;
  int grid = 0;               // G
  std::size_t feature_dim = 0;  // F
  std::vector<float> pixels;  // row-major (row, col, feature)
  std::vector<std::uint8_t> presence;  // G*G, 1 where a source cell existed

  std::size_t patches() const { return static_cast<std::size_t>(grid) * grid; }
  std::span<const float> patch(std::size_t slot) const {
    return std::span<const float>(pixels).subspan(slot * feature_dim, feature_dim);
  }
  std::span<float> patch(std::size_t slot) { return std::span<float>(pixels).subspan(slot * feature_dim, feature_dim); }
  std::size_t present_count() const {
    std::size_t n = 0;
    for (auto p : presence) n += p;
    return n;
  }
};

struct RasterDataset {
  int image_level = 8;   // l'
  int patch_level = 12;  // l
  std::size_t feature_dim = kDefaultFeatureDim;
  std::vector<RasterImage> images;
  std::string stats_ref;  // provenance of the normalization stats, not serialized

  int grid() const { return grid_side(image_level, patch_level); }
};

using ParentGroups = std::map<CellId, std::vector<const CellFeatures*>>;

inline ParentGroups group_by_parent(std::span<const CellFeatures> cells, int image_level) {
  ParentGroups groups;
  int level = -1;
  for (const auto& rec : cells) {
    const CellId c = rec.cell();
    if (level < 0) {
      level = c.level();
      detail::require(image_level < level, "image level must be below patch level (" +
                                               std::to_string(image_level) + " >= " + std::to_string(level) + ")");
    }
    detail::require(c.level() == level, "mixed patch levels in input cells");
    groups[c.parent(image_level)].push_back(&rec);
  }
  return groups;
}

inline RasterImage rasterize_image(CellId parent, std::span<const CellFeatures* const> children, const NormStats& stats,
                                   int patch_level) {
  const int g = grid_side(parent.level(), patch_level);
  RasterImage img;
  img.parent = parent;
  img.grid = g;
  img.feature_dim = stats.dim();
  img.pixels.resize(img.patches() * img.feature_dim);
  img.presence.assign(img.patches(), 0);

  const std::vector<double> zeros(stats.dim(), 0.0);
  const auto empty = apply_norm(std::span<const double>(zeros), stats);
  for (std::size_t slot = 0; slot < img.patches(); ++slot) {
    auto dst = img.patch(slot);
    for (std::size_t f = 0; f < dst.size(); ++f) dst[f] = static_cast<float>(empty[f]);
  }
  for (const CellFeatures* child : children) {
    const CellId c = child->cell();
    detail::require(c.level() == patch_level, "child " + child->token + " is not at the patch level");
    const GridPos pos = grid_position(c, parent);
    const std::size_t slot = static_cast<std::size_t>(pos.row) * g + pos.col;
    detail::require(!img.presence[slot], "two cells map to slot (" + std::to_string(pos.row) + ", " +
                                             std::to_string(pos.col) + ") of " + parent.token() +
                                             "; duplicate tokens?");
    img.presence[slot] = 1;
    const auto normed = apply_norm(*child, stats);
    auto dst = img.patch(slot);
    for (std::size_t f = 0; f < dst.size(); ++f) dst[f] = static_cast<float>(normed[f]);
  }
  return img;
}

inline RasterImage rasterize_image(CellId parent, std::span<const CellFeatures> children, const NormStats& stats,
                                   int patch_level) {
  std::vector<const CellFeatures*> ptrs;
  ptrs.reserve(children.size());
  for (const auto& c : children) ptrs.push_back(&c);
  return rasterize_image(parent, std::span<const CellFeatures* const>(ptrs), stats, patch_level);
}

// Builds the dataset from in-memory records. Parents with fewer than
// min_present * G^2 children are dropped. Images are ordered by parent id.
inline RasterDataset build_dataset(std::span<const CellFeatures> cells, const NormStats& stats, int image_level,
                                   int patch_level, double min_present = 0.0, std::size_t threads = 1) {
  detail::require(min_present >= 0.0 && min_present <= 1.0, "min_present must lie in [0, 1]");
  const int g = grid_side(image_level, patch_level);
  for (const auto& rec : cells) {
    detail::require(rec.cell().level() == patch_level,
                    "cell " + rec.token + " is not at patch level " + std::to_string(patch_level));
  }
  const ParentGroups groups = group_by_parent(cells, image_level);
  std::vector<const ParentGroups::value_type*> kept;
  for (const auto& entry : groups) {
    if (static_cast<double>(entry.second.size()) >= min_present * g * g) kept.push_back(&entry);
  }
  RasterDataset ds;
  ds.image_level = image_level;
  ds.patch_level = patch_level;
  ds.feature_dim = stats.dim();
  ds.images.resize(kept.size());
  parallel_chunks(kept.size(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      ds.images[k] = rasterize_image(kept[k]->first, std::span<const CellFeatures* const>(kept[k]->second), stats,
                                     patch_level);
    }
  });
  return ds;
}

inline RasterDataset build_dataset(const std::string& feature_path, const NormStats& stats, int image_level,
                                   int patch_level, double min_present = 0.0, std::size_t threads = 1) {
  const auto cells = load_features(feature_path, stats.dim());
  return build_dataset(std::span<const CellFeatures>(cells), stats, image_level, patch_level, min_present, threads);
}

inline void write_raster_dataset(std::ostream& out, const RasterDataset& ds) {
  io::write_magic(out, "S2VR");
  io::write_pod<std::uint16_t>(out, 1);
  io::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(ds.image_level));
  io::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(ds.patch_level));
  io::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(ds.feature_dim));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ds.images.size()));
  for (const auto& img : ds.images) {
    io::write_pod<std::uint64_t>(out, img.parent.raw());
    io::write_span<float>(out, img.pixels);
    std::vector<std::uint8_t> bits((img.patches() + 7) / 8, 0);
    for (std::size_t s = 0; s < img.patches(); ++s) {
      if (img.presence[s]) bits[s / 8] |= static_cast<std::uint8_t>(1u << (s % 8));
    }
    io::write_span<std::uint8_t>(out, bits);
  }
}

inline RasterDataset read_raster_dataset(std::istream& in) {
  io::expect_magic(in, "S2VR");
  const auto version = io::read_pod<std::uint16_t>(in);
  detail::require(version == 1, "unsupported raster dataset version " + std::to_string(version));
  RasterDataset ds;
  ds.image_level = io::read_pod<std::uint8_t>(in);
  ds.patch_level = io::read_pod<std::uint8_t>(in);
  ds.feature_dim = io::read_pod<std::uint16_t>(in);
  const auto count = io::read_pod<std::uint32_t>(in);
  const int g = ds.grid();
  ds.images.resize(count);
  for (auto& img : ds.images) {
    img.parent = CellId::from_raw(io::read_pod<std::uint64_t>(in));
    detail::require(img.parent.level() == ds.image_level, "image parent level mismatch");
    img.grid = g;
    img.feature_dim = ds.feature_dim;
    img.pixels.resize(img.patches() * img.feature_dim);
    io::read_span<float>(in, img.pixels);
    std::vector<std::uint8_t> bits((img.patches() + 7) / 8);
    io::read_span<std::uint8_t>(in, bits);
    img.presence.resize(img.patches());
    for (std::size_t s = 0; s < img.patches(); ++s) img.presence[s] = (bits[s / 8] >> (s % 8)) & 1u;
  }
  return ds;
}

inline void save_raster_dataset(const std::string& path, const RasterDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write raster dataset: " + path);
  write_raster_dataset(out, ds);
}

inline RasterDataset load_raster_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open raster dataset: " + path);
  return read_raster_dataset(in);
}

}  // namespace s2vec
