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

// Per-cell input features beyond the learned embeddings: the multi-scale
// location encoding and externally produced embeddings.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2vec/error.hpp"
#include "s2vec/mae/embedding.hpp"
#include "s2vec/s2geom.hpp"

namespace s2vec::downstream {

struct LocationScales {
  std::size_t count = 16;  // S
  double min_deg = 0.01;
  double max_deg = 360.0;

  void validate() const {
    detail::require(count >= 1, "location encoding needs at least one scale");
    detail::require(min_deg > 0 && max_deg >= min_deg && std::isfinite(max_deg), "invalid location scale range");
  }

  // Geometric progression from min_deg to max_deg.
  double wavelength(std::size_t s) const {
    if (count == 1) return min_deg;
    return min_deg * std::pow(max_deg / min_deg, static_cast<double>(s) / static_cast<double>(count - 1));
  }
};

// [sin(x/l), cos(x/l), sin(y/l), cos(y/l)] per scale, x = lng, y = lat.
inline std::vector<double> location_encode(const LatLng& p, const LocationScales& scales = {}) {
  scales.validate();
  std::vector<double> out;
  out.reserve(4 * scales.count);
  for (std::size_t s = 0; s < scales.count; ++s) {
    const double l = scales.wavelength(s);
    out.push_back(std::sin(p.lng / l));
    out.push_back(std::cos(p.lng / l));
    out.push_back(std::sin(p.lat / l));
    out.push_back(std::cos(p.lat / l));
  }
  return out;
}

// Native S2VE file, or JSONL {"lat", "lng", "vector"} points averaged per
// level-`level` cell.
inline EmbeddingTable load_external_embeddings(const std::string& path, int level) {
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw ValidationError("cannot open external embeddings " + path);
    char magic[4] = {};
    probe.read(magic, 4);
    if (probe.gcount() == 4 && std::string(magic, 4) == "S2VE") return load_embedding_table(path);
  }
  std::ifstream in(path);
  std::map<CellId, std::pair<std::vector<double>, std::size_t>> acc;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      const auto vec = j.at("vector").get<std::vector<double>>();
      detail::require(!vec.empty(), "empty vector at " + where);
      if (dim == 0) dim = vec.size();
      detail::require(vec.size() == dim, "ragged external vectors: " + std::to_string(vec.size()) + " vs " +
                                             std::to_string(dim) + " at " + where);
      for (double v : vec) detail::require(std::isfinite(v), "non-finite vector entry at " + where);
      const CellId c = cell_from_latlng(LatLng::from_degrees(j.at("lat").get<double>(), j.at("lng").get<double>()),
                                        level);
      auto& [sum, n] = acc[c];
      if (sum.empty()) sum.assign(dim, 0.0);
      for (std::size_t k = 0; k < dim; ++k) sum[k] += vec[k];
      ++n;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("bad external embedding record at " + where + ": " + e.what());
    }
  }
  detail::require(!acc.empty(), "external embedding file " + path + " is empty");
  EmbeddingTable t(dim);
  std::vector<float> v(dim);
  for (const auto& [c, entry] : acc) {
    for (std::size_t k = 0; k < dim; ++k) v[k] = static_cast<float>(entry.first[k] / static_cast<double>(entry.second));
    t.append(c.raw(), v);
  }
  t.finalize();
  return t;
}

}  // namespace s2vec::downstream
