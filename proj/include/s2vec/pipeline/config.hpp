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

// Whole-pipeline configuration: JSON file plus flag overrides, with a
// content hash that stamps every artifact.

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2vec/downstream/evaluate.hpp"
#include "s2vec/error.hpp"
#include "s2vec/mae/config.hpp"
#include "s2vec/pipeline/synth.hpp"
#include "s2vec/s2geom.hpp"
#include "s2vec/util/hash.hpp"

namespace s2vec::pipeline {

enum class EmbedMode { patch, contextual, image };

inline std::string to_string(EmbedMode m) {
  switch (m) {
    case EmbedMode::patch: return "patch";
    case EmbedMode::contextual: return "contextual";
    case EmbedMode::image: return "image";
  }
  return "?";
}

inline EmbedMode embed_mode_from_string(const std::string& s) {
  if (s == "patch") return EmbedMode::patch;
  if (s == "contextual") return EmbedMode::contextual;
  if (s == "image") return EmbedMode::image;
  throw ValidationError("unknown embed mode '" + s + "' (expected patch, contextual or image)");
}

struct PipelineConfig {
  std::string features;               // input feature JSONL; empty means <out>/features.jsonl
  std::string labels;                 // empty means <out>/labels.jsonl
  std::vector<std::string> external;  // extra embedding sources (JSONL points or S2VE)
  std::string region;                 // holdout polygon, geographic split only
  int image_level = 8;                // l'
  int patch_level = 12;               // l
  std::size_t feature_dim = kDefaultFeatureDim;
  double min_present = 0.0;
  mae::MaeConfig mae;
  EmbedMode embed_mode = EmbedMode::patch;
  bool use_s2vec = true;  // the pipeline's own table is the first eval source
  downstream::ProbeConfig probe;
  downstream::ProbeGrid grid;
  downstream::FusionSpec fusion;
  downstream::SplitKind split = downstream::SplitKind::random;
  std::array<double, 3> fractions{0.6, 0.2, 0.2};
  std::size_t eval_seeds = 20;
  SynthSpec synth;
  std::string out = "s2vec_out";
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // Derived MAE fields follow the top-level levels and feature count.
  void sync() {
    mae.feature_dim = feature_dim;
    mae.grid = grid_side(image_level, patch_level);
    synth.feature_dim = feature_dim;
    synth.image_level = image_level;
    synth.patch_level = patch_level;
    synth.seed = seed;
  }

  void validate() const {
    detail::require(image_level >= 0 && image_level < patch_level && patch_level <= kMaxLevel,
                    "levels must satisfy 0 <= image_level < patch_level <= 30");
    detail::require(patch_level - image_level <= 8, "patch/image level gap above 8 gives oversized images");
    detail::require(feature_dim >= 1, "feature_dim must be positive");
    detail::require(min_present >= 0 && min_present <= 1, "min_present must lie in [0, 1]");
    mae.validate();
    detail::require(mae.feature_dim == feature_dim && mae.grid == grid_side(image_level, patch_level),
                    "MAE shape disagrees with the pipeline levels or feature_dim");
    probe.validate();
    grid.validate();
    detail::require(eval_seeds >= 1, "eval_seeds must be >= 1");
    detail::require(threads >= 1, "threads must be >= 1");
    detail::require(!out.empty(), "output directory must be set");
    detail::require(split != downstream::SplitKind::geographic || !region.empty(),
                    "geographic split needs a region file");
    detail::require(use_s2vec || !external.empty() || fusion.location,
                    "evaluation needs at least one embedding source or the location encoding");
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json mae = to_json(c.mae);
  mae.erase("feature_dim");
  mae.erase("grid");
  return {{"features", c.features},
          {"labels", c.labels},
          {"external", c.external},
          {"region", c.region},
          {"image_level", c.image_level},
          {"patch_level", c.patch_level},
          {"feature_dim", c.feature_dim},
          {"min_present", c.min_present},
          {"mae", mae},
          {"embed_mode", to_string(c.embed_mode)},
          {"use_s2vec", c.use_s2vec},
          {"probe",
           {{"max_epochs", c.probe.max_epochs},
            {"patience", c.probe.patience},
            {"batch", c.probe.batch},
            {"weight_decay", c.probe.adamw.weight_decay}}},
          {"grid", {{"hidden", c.grid.hidden}, {"lr", c.grid.lr}, {"dropout", c.grid.dropout}}},
          {"fusion",
           {{"mode", downstream::to_string(c.fusion.mode)},
            {"proj_dim", c.fusion.proj_dim},
            {"location", c.fusion.location},
            {"loc_per_source", c.fusion.loc_per_source},
            {"scales", c.fusion.scales.count},
            {"min_wavelength", c.fusion.scales.min_deg},
            {"max_wavelength", c.fusion.scales.max_deg}}},
          {"split", downstream::to_string(c.split)},
          {"fractions", c.fractions},
          {"eval_seeds", c.eval_seeds},
          {"synth", [&] {
             auto s = to_json(c.synth);
             for (const char* k : {"seed", "feature_dim", "image_level", "patch_level"}) s.erase(k);
             return s;
           }()},
          {"out", c.out},
          {"seed", c.seed},
          {"threads", c.threads}};
}

namespace config_detail {

template <typename F>
void each_key(const nlohmann::json& j, const std::string& what, F&& f) {
  detail::require(j.is_object(), what + " must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (!f(key, v)) throw ValidationError("unknown " + what + " key: " + key);
  }
}

}  // namespace config_detail

// Keys absent from j keep the values in base; unknown keys are rejected.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  using config_detail::each_key;
  try {
    each_key(j, "config", [&](const std::string& key, const nlohmann::json& v) {
      if (key == "features") c.features = v.get<std::string>();
      else if (key == "labels") c.labels = v.get<std::string>();
      else if (key == "external") c.external = v.get<std::vector<std::string>>();
      else if (key == "region") c.region = v.get<std::string>();
      else if (key == "image_level") c.image_level = v.get<int>();
      else if (key == "patch_level") c.patch_level = v.get<int>();
      else if (key == "feature_dim") c.feature_dim = v.get<std::size_t>();
      else if (key == "min_present") c.min_present = v.get<double>();
      else if (key == "mae") {
        detail::require(v.is_object() && !v.contains("feature_dim") && !v.contains("grid"),
                        "mae.feature_dim and mae.grid follow the top-level feature_dim and levels");
        auto shaped = c.mae;
        shaped.feature_dim = c.feature_dim;
        shaped.grid = 1;
        c.mae = mae::mae_config_from_json(v, shaped);
      } else if (key == "embed_mode") c.embed_mode = embed_mode_from_string(v.get<std::string>());
      else if (key == "use_s2vec") c.use_s2vec = v.get<bool>();
      else if (key == "probe") {
        each_key(v, "probe", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "max_epochs") c.probe.max_epochs = x.get<std::size_t>();
          else if (k == "patience") c.probe.patience = x.get<std::size_t>();
          else if (k == "batch") c.probe.batch = x.get<std::size_t>();
          else if (k == "weight_decay") c.probe.adamw.weight_decay = x.get<double>();
          else return false;
          return true;
        });
      } else if (key == "grid") {
        each_key(v, "grid", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "hidden") c.grid.hidden = x.get<std::vector<std::size_t>>();
          else if (k == "lr") c.grid.lr = x.get<std::vector<double>>();
          else if (k == "dropout") c.grid.dropout = x.get<std::vector<double>>();
          else return false;
          return true;
        });
      } else if (key == "fusion") {
        each_key(v, "fusion", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "mode") c.fusion.mode = downstream::fusion_mode_from_string(x.get<std::string>());
          else if (k == "proj_dim") c.fusion.proj_dim = x.get<std::size_t>();
          else if (k == "location") c.fusion.location = x.get<bool>();
          else if (k == "loc_per_source") c.fusion.loc_per_source = x.get<bool>();
          else if (k == "scales") c.fusion.scales.count = x.get<std::size_t>();
          else if (k == "min_wavelength") c.fusion.scales.min_deg = x.get<double>();
          else if (k == "max_wavelength") c.fusion.scales.max_deg = x.get<double>();
          else return false;
          return true;
        });
      } else if (key == "split") c.split = downstream::split_kind_from_string(v.get<std::string>());
      else if (key == "fractions") c.fractions = v.get<std::array<double, 3>>();
      else if (key == "eval_seeds") c.eval_seeds = v.get<std::size_t>();
      else if (key == "synth") {
        for (const char* k : {"seed", "feature_dim", "image_level", "patch_level"})
          detail::require(!v.contains(k), std::string("synth.") + k + " follows the top-level setting");
        auto s = c.synth;
        s.image_level = 0;
        s.patch_level = 1;
        c.synth = synth_spec_from_json(v, s);
      } else if (key == "out") c.out = v.get<std::string>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "threads") c.threads = v.get<std::size_t>();
      else return false;
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad config value: ") + e.what());
  }
  c.sync();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path, PipelineConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed JSON in " + path + ": " + e.what());
  }
  return pipeline_config_from_json(j, std::move(base));
}

// Content hash of everything that can change an output byte; the output
// directory is excluded.
inline std::string config_hash(const PipelineConfig& c) {
  auto j = to_json(c);
  j.erase("out");
  return sha256_hex(j.dump()).substr(0, 16);
}

}  // namespace s2vec::pipeline
