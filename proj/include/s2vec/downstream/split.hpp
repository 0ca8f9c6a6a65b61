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

// Train/validation/test splits: random fractions and geographic holdout.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2vec/error.hpp"
#include "s2vec/s2geom.hpp"

namespace s2vec::downstream {

enum class SplitKind { random, geographic };

inline std::string to_string(SplitKind k) { return k == SplitKind::random ? "random" : "geographic"; }

inline SplitKind split_kind_from_string(const std::string& s) {
  if (s == "random") return SplitKind::random;
  if (s == "geographic") return SplitKind::geographic;
  throw ValidationError("unknown split kind '" + s + "' (expected random or geographic)");
}

// Indices into the labeled-cell sequence.
struct Split {
  std::vector<std::size_t> train, val, test;
};

namespace split_detail {

inline void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

}  // namespace split_detail

// Sizes are round(f_train n) and round(f_val n); test takes the rest.
inline Split split_random(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed) {
  detail::require(n >= 3, "random split needs at least 3 cells, got " + std::to_string(n));
  for (double f : fractions) detail::require(f > 0 && f < 1, "split fractions must lie in (0, 1)");
  detail::require(std::fabs(fractions[0] + fractions[1] + fractions[2] - 1.0) < 1e-9, "split fractions must sum to 1");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  split_detail::shuffle(idx, rng);
  const std::size_t nd = static_cast<std::size_t>(n);
  std::size_t n_train = static_cast<std::size_t>(std::llround(fractions[0] * nd));
  std::size_t n_val = static_cast<std::size_t>(std::llround(fractions[1] * nd));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1 - n_train);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

// Simple polygon in (lat, lng) degrees, tested planarly.
class Region {
 public:
  Region() = default;
  explicit Region(std::vector<LatLng> ring) : ring_(std::move(ring)) {
    if (ring_.size() >= 2 && ring_.front().lat == ring_.back().lat && ring_.front().lng == ring_.back().lng)
      ring_.pop_back();
    detail::require(ring_.size() >= 3, "region ring needs at least 3 distinct vertices");
    for (const auto& p : ring_) {
      detail::require(std::isfinite(p.lat) && std::isfinite(p.lng) && std::fabs(p.lat) <= 90 &&
                          std::fabs(p.lng) <= 180,
                      "region vertex out of range");
    }
    detail::require(std::fabs(signed_area()) > 0, "region has zero area");
  }

  static Region box(double lat_lo, double lat_hi, double lng_lo, double lng_hi) {
    return Region({{lat_lo, lng_lo}, {lat_lo, lng_hi}, {lat_hi, lng_hi}, {lat_hi, lng_lo}});
  }

  const std::vector<LatLng>& ring() const { return ring_; }

  // Even-odd ray cast along constant latitude.
  bool contains(const LatLng& p) const {
    bool inside = false;
    for (std::size_t i = 0, j = ring_.size() - 1; i < ring_.size(); j = i++) {
      const auto& a = ring_[i];
      const auto& b = ring_[j];
      if ((a.lat > p.lat) != (b.lat > p.lat)) {
        const double lng_cross = a.lng + (p.lat - a.lat) * (b.lng - a.lng) / (b.lat - a.lat);
        if (p.lng < lng_cross) inside = !inside;
      }
    }
    return inside;
  }

  double signed_area() const {
    double a = 0;
    for (std::size_t i = 0, j = ring_.size() - 1; i < ring_.size(); j = i++)
      a += ring_[j].lng * ring_[i].lat - ring_[i].lng * ring_[j].lat;
    return 0.5 * a;
  }

  nlohmann::json to_json() const {
    nlohmann::json ring = nlohmann::json::array();
    for (const auto& p : ring_) ring.push_back({p.lat, p.lng});
    return {{"ring", ring}};
  }

 private:
  std::vector<LatLng> ring_;
};

// {"ring": [[lat, lng], ...]}
inline Region region_from_json(const nlohmann::json& j) {
  try {
    detail::require(j.is_object() && j.contains("ring") && j.at("ring").is_array(),
                    "region JSON needs a \"ring\" array of [lat, lng] pairs");
    std::vector<LatLng> ring;
    for (const auto& v : j.at("ring")) {
      detail::require(v.is_array() && v.size() == 2, "region vertex must be [lat, lng]");
      ring.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    return Region(std::move(ring));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad region JSON: ") + e.what());
  }
}

inline Region load_region(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open region file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed JSON in " + path + ": " + e.what());
  }
  return region_from_json(j);
}

// Test = cells whose center lies in the region; the rest is shuffled and
// split 75/25 into train/val.
inline Split split_geographic(std::span<const LatLng> centers, const Region& region, std::uint64_t seed,
                              double train_share = 0.75) {
  detail::require(train_share > 0 && train_share < 1, "train share must lie in (0, 1)");
  Split s;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < centers.size(); ++i) (region.contains(centers[i]) ? s.test : rest).push_back(i);
  detail::require(!s.test.empty(), "geographic split: no cell center lies inside the holdout region");
  detail::require(rest.size() >= 2, "geographic split: fewer than 2 cells outside the holdout region");
  std::mt19937_64 rng(seed);
  split_detail::shuffle(rest, rng);
  std::size_t n_train = static_cast<std::size_t>(std::llround(train_share * static_cast<double>(rest.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, rest.size() - 1);
  s.train.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_train), rest.end());
  return s;
}

}  // namespace s2vec::downstream
