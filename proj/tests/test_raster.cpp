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

#include "s2vec/raster.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "test_util.hpp"

namespace s2vec {
namespace {

std::vector<CellFeatures> cells_under(CellId parent, int level, std::size_t dim, double keep, std::mt19937_64& rng) {
  std::bernoulli_distribution take(keep);
  std::poisson_distribution<int> pois(3.0);
  std::vector<CellFeatures> out;
  for (const CellId c : parent.descendants(level)) {
    if (!take(rng)) continue;
    CellFeatures r{c.token(), std::vector<double>(dim)};
    for (auto& v : r.counts) v = pois(rng);
    out.push_back(std::move(r));
  }
  return out;
}

TEST(Raster, GroupByParentPartitions) {
  std::mt19937_64 rng(1);
  const CellId p1 = cell_from_latlng({10, 10}, 8), p2 = cell_from_latlng({-30, 100}, 8);
  auto cells = cells_under(p1, 12, 3, 0.5, rng);
  const auto more = cells_under(p2, 12, 3, 0.5, rng);
  cells.insert(cells.end(), more.begin(), more.end());
  const auto groups = group_by_parent(cells, 8);
  ASSERT_EQ(groups.size(), 2u);
  std::size_t total = 0;
  for (const auto& [parent, kids] : groups) {
    total += kids.size();
    for (const auto* k : kids) EXPECT_EQ(parent_at(k->cell(), 8), parent);
  }
  EXPECT_EQ(total, cells.size());
  EXPECT_THROW(group_by_parent(cells, 12), ValidationError);
  cells.push_back({cell_from_latlng({0, 0}, 11).token(), {0, 0, 0}});
  EXPECT_THROW(group_by_parent(cells, 8), ValidationError);
}

TEST(Raster, SingleGroupWhenAllUnderOneParent) {
  std::mt19937_64 rng(2);
  const CellId p = cell_from_latlng({45, -100}, 8);
  const auto cells = cells_under(p, 12, 2, 0.3, rng);
  const auto groups = group_by_parent(cells, 8);
  ASSERT_EQ(groups.size(), 1u);
  EXPECT_EQ(groups.begin()->first, p);
}

TEST(Raster, ZeroChildrenImage) {
  std::vector<CellFeatures> fit{{"1", {1, 2}}, {"3", {3, 6}}};
  const auto stats = fit_norm_stats(fit);
  const CellId parent = cell_from_latlng({0, 0}, 8);
  const auto img = rasterize_image(parent, std::span<const CellFeatures>{}, stats, 12);
  EXPECT_EQ(img.grid, 16);
  EXPECT_EQ(img.present_count(), 0u);
  const std::vector<double> zero{0, 0};
  const auto z = apply_norm(std::span<const double>(zero), stats);
  for (std::size_t s = 0; s < img.patches(); ++s) {
    EXPECT_FLOAT_EQ(img.patch(s)[0], static_cast<float>(z[0]));
    EXPECT_FLOAT_EQ(img.patch(s)[1], static_cast<float>(z[1]));
  }
}

TEST(Raster, FullParentFillsSixteenBySixteen) {
  std::mt19937_64 rng(3);
  const CellId parent = cell_from_latlng({40.7, -74.0}, 8);
  const auto cells = cells_under(parent, 12, 4, 1.0, rng);
  ASSERT_EQ(cells.size(), 256u);
  const auto stats = fit_norm_stats(cells);
  const auto img = rasterize_image(parent, cells, stats, 12);
  EXPECT_EQ(img.grid, 16);
  EXPECT_EQ(img.present_count(), 256u);
  for (const auto& c : cells) {
    const GridPos pos = grid_position(c.cell(), parent);
    const auto z = apply_norm(c, stats);
    const auto px = img.patch(static_cast<std::size_t>(pos.row) * 16 + pos.col);
    for (std::size_t f = 0; f < 4; ++f) EXPECT_FLOAT_EQ(px[f], static_cast<float>(z[f]));
  }
}

TEST(Raster, TopLeftChildOnly) {
  const CellId parent = cell_from_latlng({-12, 33}, 8);
  std::uint32_t pi, pj, psize;
  const int face = parent.ij_bounds(pi, pj, psize);
  const std::uint32_t child = psize / 16;
  const CellId corner = CellId::from_face_ij(face, pi, pj + 15 * child).parent(12);
  std::vector<CellFeatures> cells{{corner.token(), {5.0}}};
  std::vector<CellFeatures> fit{{"1", {0.0}}, {"3", {10.0}}};
  const auto img = rasterize_image(parent, cells, fit_norm_stats(fit), 12);
  EXPECT_EQ(img.present_count(), 1u);
  EXPECT_EQ(img.presence[0], 1);
}

TEST(Raster, DuplicateSlotRejected) {
  const CellId parent = cell_from_latlng({5, 5}, 8);
  const CellId c = parent.descendants(12).front();
  std::vector<CellFeatures> cells{{c.token(), {1.0}}, {c.token(), {2.0}}};
  EXPECT_THROW(rasterize_image(parent, cells, fit_norm_stats(cells), 12), ValidationError);
}

TEST(Raster, BuildDatasetThresholdAndOrder) {
  std::mt19937_64 rng(4);
  std::vector<CellFeatures> cells;
  const CellId parents[] = {cell_from_latlng({50, 8}, 8), cell_from_latlng({-20, -60}, 8),
                            cell_from_latlng({35, 139}, 8), cell_from_latlng({1, 1}, 8)};
  for (int k = 0; k < 4; ++k) {
    auto more = cells_under(parents[k], 12, 3, k == 3 ? 1.0 : 0.6, rng);
    cells.insert(cells.end(), more.begin(), more.end());
  }
  const auto stats = fit_norm_stats(cells);
  const auto ds = build_dataset(cells, stats, 8, 12);
  ASSERT_EQ(ds.images.size(), 4u);
  for (std::size_t k = 1; k < ds.images.size(); ++k) {
    EXPECT_LT(ds.images[k - 1].parent, ds.images[k].parent);
    EXPECT_LT(ds.images[k - 1].parent.token(), ds.images[k].parent.token());
  }
  const auto full_only = build_dataset(cells, stats, 8, 12, 1.0);
  ASSERT_EQ(full_only.images.size(), 1u);
  EXPECT_EQ(full_only.images[0].parent, parents[3]);
  EXPECT_THROW(build_dataset(cells, stats, 8, 12, 1.5), ValidationError);
  EXPECT_THROW(build_dataset(cells, stats, 8, 13), ValidationError);
}

TEST(Raster, PartitionReconstructionAndSerialization) {
  std::mt19937_64 rng(5);
  std::vector<CellFeatures> cells;
  for (int k = 0; k < 6; ++k) {
    const CellId p = cell_from_latlng({-60.0 + 20 * k, -170.0 + 55 * k}, 6);
    auto more = cells_under(p, 9, 5, 0.7, rng);
    cells.insert(cells.end(), more.begin(), more.end());
  }
  const auto stats = fit_norm_stats(cells);
  const auto ds = build_dataset(cells, stats, 6, 9, 0.0, 3);
  std::size_t present = 0;
  std::map<CellId, std::pair<std::size_t, std::size_t>> where;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    present += ds.images[i].present_count();
  }
  EXPECT_EQ(present, cells.size());
  for (const auto& c : cells) {
    const CellId parent = c.cell().parent(6);
    std::size_t hits = 0;
    for (const auto& img : ds.images) {
      if (img.parent != parent) continue;
      ++hits;
      const GridPos pos = grid_position(c.cell(), parent);
      const std::size_t slot = static_cast<std::size_t>(pos.row) * img.grid + pos.col;
      ASSERT_TRUE(img.presence[slot]);
      const auto px = img.patch(slot);
      const std::vector<double> z(px.begin(), px.end());
      const auto back = invert_norm(z, stats);
      for (std::size_t f = 0; f < 5; ++f) EXPECT_NEAR(back[f], c.counts[f], 1e-6 * std::max(1.0, c.counts[f]) + 1e-5);
    }
    EXPECT_EQ(hits, 1u);
  }
  std::stringstream a, b;
  write_raster_dataset(a, ds);
  write_raster_dataset(b, build_dataset(cells, stats, 6, 9, 0.0, 1));
  EXPECT_EQ(a.str(), b.str());
  const auto back = read_raster_dataset(a);
  ASSERT_EQ(back.images.size(), ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    EXPECT_EQ(back.images[i].parent, ds.images[i].parent);
    EXPECT_EQ(back.images[i].pixels, ds.images[i].pixels);
    EXPECT_EQ(back.images[i].presence, ds.images[i].presence);
  }
}

TEST(Raster, BinaryHeaderLayout) {
  RasterDataset ds;
  ds.image_level = 8;
  ds.patch_level = 10;
  ds.feature_dim = 2;
  RasterImage img;
  img.parent = cell_from_latlng({0, 0}, 8);
  img.grid = 4;
  img.feature_dim = 2;
  img.pixels.assign(32, 0.5f);
  img.presence.assign(16, 0);
  img.presence[0] = 1;
  img.presence[9] = 1;
  ds.images.push_back(img);
  std::stringstream ss;
  write_raster_dataset(ss, ds);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 2 + 1 + 1 + 2 + 4 + 8 + 32 * 4 + 2);
  EXPECT_EQ(bytes.substr(0, 4), "S2VR");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 8);
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 10);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 2]), 0x01);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 1]), 0x02);
}

}  // namespace
}  // namespace s2vec
