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

// Regression labels: loading, per-cell median aggregation and min-max
// target scaling.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2vec/error.hpp"
#include "s2vec/s2geom.hpp"
#include "s2vec/util/hash.hpp"

namespace s2vec::downstream {

struct LabeledCell {
  std::string token;
  double target = 0.0;

  CellId cell() const { return CellId::from_token(token); }
};

// One label record: a point (lat/lng) or an already-assigned cell.
struct LabelPoint {
  std::optional<LatLng> where;
  std::optional<CellId> cell;
  double target = 0.0;
};

inline double median_of(std::vector<double> v) {
  detail::require(!v.empty(), "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Groups records by their level-`level` cell; each cell gets the median
// target. Output is sorted by cell id.
inline std::vector<LabeledCell> aggregate_labels(std::span<const LabelPoint> points, int level) {
  detail::require(!points.empty(), "no label records");
  detail::require(level >= 0 && level <= kMaxLevel, "invalid label level " + std::to_string(level));
  std::map<CellId, std::vector<double>> groups;
  for (const auto& p : points) {
    detail::require(std::isfinite(p.target), "non-finite label target");
    CellId c;
    if (p.cell) {
      detail::require(p.cell->level() >= level, "label cell " + p.cell->token() + " is coarser than level " +
                                                    std::to_string(level));
      c = p.cell->parent(level);
    } else {
      detail::require(p.where.has_value(), "label record has neither a point nor a cell");
      c = cell_from_latlng(*p.where, level);
    }
    groups[c].push_back(p.target);
  }
  std::vector<LabeledCell> out;
  out.reserve(groups.size());
  for (auto& [c, v] : groups) out.push_back({c.token(), median_of(std::move(v))});
  return out;
}

inline std::vector<LabeledCell> aggregate_labels(std::span<const std::pair<LatLng, double>> points, int level) {
  std::vector<LabelPoint> recs;
  recs.reserve(points.size());
  for (const auto& [ll, t] : points) recs.push_back({ll, std::nullopt, t});
  return aggregate_labels(std::span<const LabelPoint>(recs), level);
}

// JSONL with {"lat", "lng", "target"} or {"token", "target"} per line.
inline std::vector<LabelPoint> load_label_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open label file " + path);
  std::vector<LabelPoint> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("malformed JSON at " + where + ": " + e.what());
    }
    try {
      LabelPoint p;
      detail::require(j.is_object() && j.contains("target"), "label record without target at " + where);
      p.target = j.at("target").get<double>();
      if (j.contains("token")) {
        p.cell = CellId::from_token(j.at("token").get<std::string>());
      } else {
        detail::require(j.contains("lat") && j.contains("lng"), "label record needs lat/lng or token at " + where);
        p.where = LatLng::from_degrees(j.at("lat").get<double>(), j.at("lng").get<double>());
      }
      out.push_back(p);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("bad label record at " + where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(e.what()) + " (" + where + ")");
    }
  }
  detail::require(!out.empty(), "label file " + path + " is empty");
  return out;
}

inline std::vector<LabeledCell> load_labels(const std::string& path, int level) {
  const auto points = load_label_points(path);
  return aggregate_labels(std::span<const LabelPoint>(points), level);
}

inline void save_labels(const std::string& path, std::span<const LabeledCell> cells) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path);
  for (const auto& c : cells) out << nlohmann::json{{"token", c.token}, {"target", c.target}}.dump() << '\n';
}

// Affine map of the training targets onto [0, 1].
struct MinMaxScaler {
  double min = 0.0;
  double max = 1.0;

  static MinMaxScaler fit(std::span<const double> train) {
    detail::require(!train.empty(), "cannot fit a scaler on no targets");
    MinMaxScaler s;
    s.min = *std::min_element(train.begin(), train.end());
    s.max = *std::max_element(train.begin(), train.end());
    detail::require(s.max > s.min, "training targets are constant; min-max scaling is degenerate");
    return s;
  }

  double transform(double y) const { return (y - min) / (max - min); }
  double inverse(double z) const { return min + z * (max - min); }

  std::vector<double> transform(std::span<const double> ys) const {
    std::vector<double> out(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) out[i] = transform(ys[i]);
    return out;
  }

  // Identifies the fitted (min, max) pair bit-exactly.
  std::string fingerprint() const {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(min)),
                  static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(max)));
    return sha256_hex(buf).substr(0, 16);
  }
};

}  // namespace s2vec::downstream
