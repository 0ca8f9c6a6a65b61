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

// Synthetic region generator: smooth latent fields drive per-cell feature
// counts, regression targets and stand-in external embeddings.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2vec/error.hpp"
#include "s2vec/ingest.hpp"
#include "s2vec/s2geom.hpp"
#include "s2vec/util/hash.hpp"

namespace s2vec::pipeline {

struct SynthBox {
  double lat_min = 40.0;
  double lat_max = 44.0;
  double lng_min = -80.0;
  double lng_max = -74.0;

  bool contains(const LatLng& p) const {
    return p.lat >= lat_min && p.lat <= lat_max && p.lng >= lng_min && p.lng <= lng_max;
  }
  friend bool operator==(const SynthBox&, const SynthBox&) = default;
};

struct SynthSpec {
  std::uint64_t seed = 0;
  SynthBox box;
  std::size_t latents = 4;         // K, fields that drive the counts
  std::size_t image_latents = 1;   // fields seen only by the external embeddings and the target
  double smoothness = 1.2;         // base wavelength of the latent fields, degrees
  std::size_t waves = 6;           // sinusoids per field
  std::size_t feature_dim = kDefaultFeatureDim;
  double noise = 0.1;              // target noise stddev
  double feature_noise = 0.4;      // per-cell, per-feature noise inside the softplus
  double cell_noise = 0.0;         // per-cell deviation of the count latents, shared by all features
  double count_scale = 8.0;
  int image_level = 8;
  int patch_level = 12;
  std::size_t max_images = 0;      // 0 keeps every image-level cell in the box
  double label_fraction = 1.0;
  std::size_t ext_dim = 32;
  std::size_t ext_shared = 2;      // count latents (the last ones) also visible to the external embeddings
  double ext_noise = 0.1;

  void validate() const {
    detail::require(latents >= 1, "synth needs at least one latent field");
    detail::require(box.lat_min < box.lat_max && box.lng_min < box.lng_max, "synth box is empty");
    detail::require(box.lat_min >= -85 && box.lat_max <= 85 && box.lng_min >= -180 && box.lng_max <= 180,
                    "synth box must lie within lat [-85, 85] and lng [-180, 180]");
    detail::require(smoothness > 0 && waves >= 1, "latent smoothness and wave count must be positive");
    detail::require(feature_dim >= 1, "feature_dim must be positive");
    detail::require(noise >= 0 && feature_noise >= 0 && cell_noise >= 0 && ext_noise >= 0, "noise levels must be >= 0");
    detail::require(count_scale > 0, "count_scale must be positive");
    detail::require(image_level >= 0 && image_level < patch_level && patch_level <= kMaxLevel,
                    "synth levels must satisfy 0 <= image_level < patch_level <= 30");
    detail::require(label_fraction > 0 && label_fraction <= 1, "label_fraction must lie in (0, 1]");
    detail::require(ext_dim >= 1, "ext_dim must be positive");
    detail::require(ext_shared <= latents, "ext_shared exceeds the latent count");
  }

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"seed", s.seed},
          {"box", {s.box.lat_min, s.box.lat_max, s.box.lng_min, s.box.lng_max}},
          {"latents", s.latents},
          {"image_latents", s.image_latents},
          {"smoothness", s.smoothness},
          {"waves", s.waves},
          {"feature_dim", s.feature_dim},
          {"noise", s.noise},
          {"feature_noise", s.feature_noise},
          {"cell_noise", s.cell_noise},
          {"count_scale", s.count_scale},
          {"image_level", s.image_level},
          {"patch_level", s.patch_level},
          {"max_images", s.max_images},
          {"label_fraction", s.label_fraction},
          {"ext_dim", s.ext_dim},
          {"ext_shared", s.ext_shared},
          {"ext_noise", s.ext_noise}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec s = {}) {
  detail::require(j.is_object(), "synth spec must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "box") {
        const auto b = v.get<std::vector<double>>();
        detail::require(b.size() == 4, "synth box must be [lat_min, lat_max, lng_min, lng_max]");
        s.box = {b[0], b[1], b[2], b[3]};
      } else if (key == "latents") s.latents = v.get<std::size_t>();
      else if (key == "image_latents") s.image_latents = v.get<std::size_t>();
      else if (key == "smoothness") s.smoothness = v.get<double>();
      else if (key == "waves") s.waves = v.get<std::size_t>();
      else if (key == "feature_dim") s.feature_dim = v.get<std::size_t>();
      else if (key == "noise") s.noise = v.get<double>();
      else if (key == "feature_noise") s.feature_noise = v.get<double>();
      else if (key == "cell_noise") s.cell_noise = v.get<double>();
      else if (key == "count_scale") s.count_scale = v.get<double>();
      else if (key == "image_level") s.image_level = v.get<int>();
      else if (key == "patch_level") s.patch_level = v.get<int>();
      else if (key == "max_images") s.max_images = v.get<std::size_t>();
      else if (key == "label_fraction") s.label_fraction = v.get<double>();
      else if (key == "ext_dim") s.ext_dim = v.get<std::size_t>();
      else if (key == "ext_shared") s.ext_shared = v.get<std::size_t>();
      else if (key == "ext_noise") s.ext_noise = v.get<double>();
      else throw ValidationError("unknown synth key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad synth value: ") + e.what());
  }
  s.validate();
  return s;
}

// Sum of random plane waves over (lng cos(lat0), lat), unit variance.
class LatentField {
 public:
  LatentField(std::mt19937_64& rng, std::size_t waves, double wavelength, double lat0) : cos_lat0_(std::cos(lat0 * std::numbers::pi / 180)) {
    std::uniform_real_distribution<double> angle(0.0, 2 * std::numbers::pi), stretch(0.5, 2.0);
    for (std::size_t m = 0; m < waves; ++m) {
      const double theta = angle(rng), lambda = wavelength * stretch(rng);
      kx_.push_back(2 * std::numbers::pi * std::cos(theta) / lambda);
      ky_.push_back(2 * std::numbers::pi * std::sin(theta) / lambda);
      phase_.push_back(angle(rng));
    }
    amp_ = std::sqrt(2.0 / static_cast<double>(waves));
  }

  double operator()(const LatLng& p) const {
    const double x = p.lng * cos_lat0_, y = p.lat;
    double acc = 0;
    for (std::size_t m = 0; m < kx_.size(); ++m) acc += std::cos(kx_[m] * x + ky_[m] * y + phase_[m]);
    return amp_ * acc;
  }

 private:
  double cos_lat0_;
  std::vector<double> kx_, ky_, phase_;
  double amp_ = 1;
};

struct SynthCell {
  CellId cell;
  LatLng center;
  std::vector<double> latents;  // K count latents, then the image-only ones
  std::vector<double> counts;
  std::vector<float> external;
  double target = 0;
  bool labeled = false;
};

struct SynthData {
  SynthSpec spec;
  std::vector<CellId> images;
  std::vector<SynthCell> cells;  // sorted by cell id
  double oracle_r2 = 0;          // OLS of the target on the true latents, labeled cells
};

inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }

// Image-level cells whose centers fall inside the box, in id order.
inline std::vector<CellId> synth_images(const SynthSpec& spec) {
  const double edge = 90.0 / std::ldexp(1.0, spec.image_level);
  const double mid = 0.5 * (spec.box.lat_min + spec.box.lat_max);
  const double dlat = edge / 8, dlng = edge / 8 / std::max(0.05, std::cos(std::fabs(mid) * std::numbers::pi / 180));
  std::set<CellId> found;
  const double pad = 2 * edge;
  for (double lat = spec.box.lat_min - pad; lat <= spec.box.lat_max + pad; lat += dlat) {
    for (double lng = spec.box.lng_min - 2 * pad; lng <= spec.box.lng_max + 2 * pad; lng += dlng) {
      const double la = std::clamp(lat, -90.0, 90.0);
      double lo = std::fmod(lng + 180.0, 360.0);
      if (lo < 0) lo += 360.0;
      found.insert(cell_from_latlng(LatLng::from_degrees(la, lo - 180.0), spec.image_level));
    }
  }
  std::vector<CellId> out;
  for (CellId c : found)
    if (spec.box.contains(cell_center(c))) out.push_back(c);
  if (spec.max_images > 0 && out.size() > spec.max_images) out.resize(spec.max_images);
  detail::require(!out.empty(), "synth box contains no image-level cell centers");
  return out;
}

// R^2 of an ordinary least squares fit with intercept.
inline double ols_r2(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::MatrixXd a(x.rows(), x.cols() + 1);
  a << Eigen::VectorXd::Ones(x.rows()), x;
  const Eigen::VectorXd beta = a.colPivHouseholderQr().solve(y);
  const double ss_res = (y - a * beta).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
  return ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
}

inline SynthData synth_generate(const SynthSpec& spec) {
  spec.validate();
  SynthData data;
  data.spec = spec;
  data.images = synth_images(spec);
  const std::size_t k = spec.latents, j = spec.image_latents, q = k + j, f = spec.feature_dim;
  const double lat0 = 0.5 * (spec.box.lat_min + spec.box.lat_max);

  std::mt19937_64 field_rng(derive_seed(spec.seed, 1));
  std::vector<LatentField> fields;
  for (std::size_t i = 0; i < q; ++i) fields.emplace_back(field_rng, spec.waves, spec.smoothness, lat0);

  std::mt19937_64 mix_rng(derive_seed(spec.seed, 2));
  std::normal_distribution<double> normal;
  Eigen::MatrixXd a(f, k);
  Eigen::VectorXd c(f);
  for (std::size_t r = 0; r < f; ++r) {
    for (std::size_t i = 0; i < k; ++i) a(r, i) = normal(mix_rng) * 1.5 / std::sqrt(static_cast<double>(k));
    c(r) = normal(mix_rng) * 0.5 - 0.5;
  }
  Eigen::VectorXd w(q);
  for (std::size_t i = 0; i < q; ++i) w(i) = normal(mix_rng);
  w /= w.norm();
  const std::size_t ext_in = spec.ext_shared + j;
  Eigen::MatrixXd b(spec.ext_dim, std::max<std::size_t>(ext_in, 1));
  for (Eigen::Index r = 0; r < b.rows(); ++r)
    for (Eigen::Index i = 0; i < b.cols(); ++i) b(r, i) = normal(mix_rng) / std::sqrt(static_cast<double>(b.cols()));

  std::mt19937_64 cell_rng(derive_seed(spec.seed, 3));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (CellId img : data.images) {
    for (CellId cell : img.descendants(spec.patch_level)) {
      SynthCell sc;
      sc.cell = cell;
      sc.center = cell_center(cell);
      Eigen::VectorXd z(q);
      for (std::size_t i = 0; i < q; ++i) z(i) = fields[i](sc.center);
      sc.latents.assign(z.data(), z.data() + q);
      Eigen::VectorXd local = z.head(k);
      for (std::size_t i = 0; i < k; ++i) local(i) += spec.cell_noise * normal(cell_rng);
      const Eigen::VectorXd eta = a * local + c;
      sc.counts.resize(f);
      for (std::size_t r = 0; r < f; ++r)
        sc.counts[r] = std::round(spec.count_scale * softplus(eta(r) + spec.feature_noise * normal(cell_rng)));
      sc.target = w.dot(z) + spec.noise * normal(cell_rng);
      sc.labeled = u01(cell_rng) < spec.label_fraction;
      Eigen::VectorXd src(b.cols());
      src.setZero();
      for (std::size_t i = 0; i < spec.ext_shared; ++i) src(i) = z(k - spec.ext_shared + i);
      for (std::size_t i = 0; i < j; ++i) src(spec.ext_shared + i) = z(k + i);
      const Eigen::VectorXd e = b * src;
      sc.external.resize(spec.ext_dim);
      for (std::size_t r = 0; r < spec.ext_dim; ++r)
        sc.external[r] = static_cast<float>(e(r) + spec.ext_noise * normal(cell_rng));
      data.cells.push_back(std::move(sc));
    }
  }
  std::sort(data.cells.begin(), data.cells.end(), [](const SynthCell& x, const SynthCell& y) { return x.cell < y.cell; });

  std::vector<const SynthCell*> labeled;
  for (const auto& sc : data.cells)
    if (sc.labeled) labeled.push_back(&sc);
  detail::require(labeled.size() > q + 1, "synth produced too few labeled cells for the oracle fit");
  Eigen::MatrixXd x(labeled.size(), q);
  Eigen::VectorXd y(labeled.size());
  for (std::size_t r = 0; r < labeled.size(); ++r) {
    for (std::size_t i = 0; i < q; ++i) x(r, i) = labeled[r]->latents[i];
    y(r) = labeled[r]->target;
  }
  data.oracle_r2 = ols_r2(x, y);
  return data;
}

struct SynthPaths {
  std::string features, labels, external, summary;

  static SynthPaths in(const std::filesystem::path& dir) {
    return {(dir / "features.jsonl").string(), (dir / "labels.jsonl").string(), (dir / "external.jsonl").string(),
            (dir / "synth.json").string()};
  }
};

inline std::vector<CellFeatures> synth_features(const SynthData& d) {
  std::vector<CellFeatures> out;
  out.reserve(d.cells.size());
  for (const auto& c : d.cells) out.push_back({c.cell.token(), c.counts});
  return out;
}

inline void write_synth(const SynthData& d, const SynthPaths& p) {
  save_features(p.features, synth_features(d));
  std::ofstream labels(p.labels, std::ios::binary), ext(p.external, std::ios::binary);
  if (!labels || !ext) throw RuntimeFailure("cannot write synthetic outputs next to " + p.features);
  for (const auto& c : d.cells) {
    if (c.labeled) labels << nlohmann::json{{"lat", c.center.lat}, {"lng", c.center.lng}, {"target", c.target}}.dump() << '\n';
    ext << nlohmann::json{{"lat", c.center.lat}, {"lng", c.center.lng}, {"vector", c.external}}.dump() << '\n';
  }
  std::size_t n_labeled = 0;
  for (const auto& c : d.cells) n_labeled += c.labeled;
  std::ofstream summary(p.summary, std::ios::binary);
  if (!summary) throw RuntimeFailure("cannot write " + p.summary);
  summary << nlohmann::json{{"spec", to_json(d.spec)},
                            {"images", d.images.size()},
                            {"cells", d.cells.size()},
                            {"labeled", n_labeled},
                            {"oracle_r2", d.oracle_r2}}
                 .dump(2)
          << '\n';
}

}  // namespace s2vec::pipeline
