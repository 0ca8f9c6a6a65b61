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

// Per-cell feature records and global feature normalization.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "s2vec/error.hpp"
#include "s2vec/s2geom.hpp"

namespace s2vec {

inline constexpr std::size_t kDefaultFeatureDim = 116;
inline constexpr double kDefaultVarianceFloor = 1e-6;

struct CellFeatures {
  std::string token;
  std::vector<double> counts;

  CellId cell() const { return CellId::from_token(token); }
};

// Streaming per-feature mean/variance (population), mergeable across shards.
class NormStats {
 public:
  NormStats() = default;
  explicit NormStats(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

  static NormStats from_moments(std::vector<double> mean, std::vector<double> variance, std::size_t count) {
    detail::require(mean.size() == variance.size(), "mean/variance length mismatch");
    detail::require(count >= 1, "norm stats need count >= 1");
    NormStats s;
    s.mean_ = std::move(mean);
    s.m2_.resize(variance.size());
    for (std::size_t f = 0; f < variance.size(); ++f) {
      detail::require(variance[f] >= 0 && std::isfinite(variance[f]), "negative or non-finite variance");
      s.m2_[f] = variance[f] * static_cast<double>(count);
    }
    s.count_ = count;
    return s;
  }

  void add(std::span<const double> x) {
    if (mean_.empty() && count_ == 0) *this = NormStats(x.size());
    detail::require(x.size() == mean_.size(), "feature dimension mismatch in norm stats");
    ++count_;
    const double n = static_cast<double>(count_);
    for (std::size_t f = 0; f < x.size(); ++f) {
      const double delta = x[f] - mean_[f];
      mean_[f] += delta / n;
      m2_[f] += delta * (x[f] - mean_[f]);
    }
  }

  // Chan et al. pairwise combination.
  void merge(const NormStats& other) {
    if (other.count_ == 0) return;
    if (count_ == 0) {
      *this = other;
      return;
    }
    detail::require(other.dim() == dim(), "feature dimension mismatch in norm stats merge");
    const double na = static_cast<double>(count_), nb = static_cast<double>(other.count_);
    const double n = na + nb;
    for (std::size_t f = 0; f < dim(); ++f) {
      const double delta = other.mean_[f] - mean_[f];
      mean_[f] += delta * nb / n;
      m2_[f] += other.m2_[f] + delta * delta * na * nb / n;
    }
    count_ += other.count_;
  }

  std::size_t dim() const { return mean_.size(); }
  std::size_t count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }

  std::vector<double> variance() const {
    std::vector<double> v(m2_.size());
    for (std::size_t f = 0; f < v.size(); ++f) {
      v[f] = count_ == 0 ? 0.0 : std::max(0.0, m2_[f] / static_cast<double>(count_));
    }
    return v;
  }

 private:
  std::vector<double> mean_;
  std::vector<double> m2_;
  std::size_t count_ = 0;
};

inline NormStats fit_norm_stats(std::span<const CellFeatures> records) {
  detail::require(!records.empty(), "cannot fit normalization stats on an empty dataset");
  NormStats stats(records.front().counts.size());
  for (const auto& r : records) stats.add(r.counts);
  return stats;
}

// out_f = (x_f - mean_f) / sqrt(max(var_f, eps))
inline std::vector<double> apply_norm(std::span<const double> counts, const NormStats& stats,
                                      double eps = kDefaultVarianceFloor) {
  detail::require(counts.size() == stats.dim(),
                  "feature dimension mismatch: record has " + std::to_string(counts.size()) +
                      ", stats have " + std::to_string(stats.dim()));
  const auto var = stats.variance();
  std::vector<double> out(counts.size());
  for (std::size_t f = 0; f < counts.size(); ++f) {
    out[f] = (counts[f] - stats.mean()[f]) / std::sqrt(std::max(var[f], eps));
  }
  return out;
}

inline std::vector<double> apply_norm(const CellFeatures& rec, const NormStats& stats,
                                      double eps = kDefaultVarianceFloor) {
  return apply_norm(std::span<const double>(rec.counts), stats, eps);
}

inline std::vector<double> invert_norm(std::span<const double> normalized, const NormStats& stats,
                                       double eps = kDefaultVarianceFloor) {
  detail::require(normalized.size() == stats.dim(), "feature dimension mismatch");
  const auto var = stats.variance();
  std::vector<double> out(normalized.size());
  for (std::size_t f = 0; f < normalized.size(); ++f) {
    out[f] = normalized[f] * std::sqrt(std::max(var[f], eps)) + stats.mean()[f];
  }
  return out;
}

// Parses one JSONL feature record; `line_no` is 1-based and only used in messages.
inline CellFeatures parse_feature_line(const std::string& line, std::size_t line_no) {
  const std::string where = "feature file line " + std::to_string(line_no) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(where + "malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object() || !j.contains("token") || !j["token"].is_string() || !j.contains("counts") ||
      !j["counts"].is_array()) {
    throw ValidationError(where + "expected {\"token\": string, \"counts\": [numbers]}");
  }
  CellFeatures rec;
  rec.token = j["token"].get<std::string>();
  try {
    (void)CellId::from_token(rec.token);
  } catch (const ValidationError& e) {
    throw ValidationError(where + e.what());
  }
  rec.counts.reserve(j["counts"].size());
  for (const auto& v : j["counts"]) {
    if (!v.is_number()) throw ValidationError(where + "non-numeric count");
    const double x = v.get<double>();
    if (!std::isfinite(x) || x < 0) throw ValidationError(where + "counts must be finite and >= 0");
    rec.counts.push_back(x);
  }
  return rec;
}

// Loads and validates a JSONL feature file. `expected_dim` of 0 accepts the
// first record's length as the dataset dimension.
inline std::vector<CellFeatures> load_features(const std::string& path, std::size_t expected_dim = 0) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open feature file: " + path);
  std::vector<CellFeatures> records;
  std::unordered_set<std::string> seen;
  int level = -1;
  std::size_t dim = expected_dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    CellFeatures rec = parse_feature_line(line, line_no);
    const std::string where = "feature file line " + std::to_string(line_no) + ": ";
    if (dim == 0) dim = rec.counts.size();
    if (rec.counts.size() != dim) {
      throw ValidationError(where + "ragged counts: got " + std::to_string(rec.counts.size()) +
                            ", expected " + std::to_string(dim));
    }
    const int lvl = rec.cell().level();
    if (level < 0) level = lvl;
    if (lvl != level) {
      throw ValidationError(where + "mixed levels: " + std::to_string(lvl) + " vs " + std::to_string(level));
    }
    const std::string canonical = rec.cell().token();
    if (!seen.insert(canonical).second) throw ValidationError(where + "duplicate token " + rec.token);
    rec.token = canonical;
    records.push_back(std::move(rec));
  }
  return records;
}

inline void save_features(const std::string& path, std::span<const CellFeatures> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write feature file: " + path);
  for (const auto& r : records) {
    nlohmann::json j{{"token", r.token}, {"counts", r.counts}};
    out << j.dump() << '\n';
  }
}

inline nlohmann::json norm_stats_to_json(const NormStats& s) {
  return {{"mean", s.mean()}, {"variance", s.variance()}, {"count", s.count()}};
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  try {
    return NormStats::from_moments(j.at("mean").get<std::vector<double>>(),
                                   j.at("variance").get<std::vector<double>>(),
                                   j.at("count").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed norm stats: ") + e.what());
  }
}

inline void save_norm_stats(const std::string& path, const NormStats& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write norm stats: " + path);
  out << norm_stats_to_json(s).dump(2) << '\n';
}

inline NormStats load_norm_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open norm stats: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed norm stats file " + path + ": " + e.what());
  }
  return norm_stats_from_json(j);
}

}  // namespace s2vec
