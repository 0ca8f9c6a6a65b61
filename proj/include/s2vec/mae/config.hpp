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

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "s2vec/error.hpp"
#include "s2vec/numerics/optim.hpp"

namespace s2vec::mae {

struct MaeConfig {
  std::size_t feature_dim = 116;  // F
  int grid = 16;                  // G
  std::size_t encoder_dim = 256;
  std::size_t decoder_dim = 128;
  std::size_t encoder_layers = 6;
  std::size_t decoder_layers = 2;
  std::size_t heads = 8;
  double mask_ratio = 0.75;
  double dropout = 0.2;
  std::size_t batch = 64;
  std::size_t epochs = 50;
  std::size_t shuffle_buffer = 1000;
  double initial_lr = 5e-4;
  double lr_alpha = 0.1;
  double clip_norm = 1.0;
  AdamWConfig adamw{};
  bool exclude_absent = false;  // drop absent slots from the masked-loss average
  bool final_norm = true;       // LayerNorm after the last encoder and decoder blocks

  std::size_t patches() const { return static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid); }

  void validate() const {
    detail::require(feature_dim > 0, "feature_dim must be positive");
    detail::require(grid > 0, "grid must be positive");
    detail::require(encoder_dim > 0 && decoder_dim > 0, "model dims must be positive");
    detail::require(heads > 0, "heads must be positive");
    detail::require(encoder_dim % heads == 0, "encoder_dim " + std::to_string(encoder_dim) +
                                                  " not divisible by heads " + std::to_string(heads));
    detail::require(decoder_dim % heads == 0, "decoder_dim " + std::to_string(decoder_dim) +
                                                  " not divisible by heads " + std::to_string(heads));
    detail::require(mask_ratio > 0.0 && mask_ratio < 1.0, "mask_ratio must lie in (0, 1)");
    detail::require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
    detail::require(batch > 0 && epochs > 0 && shuffle_buffer > 0, "batch, epochs and shuffle_buffer must be positive");
    detail::require(initial_lr > 0.0, "initial_lr must be positive");
    detail::require(lr_alpha >= 0.0 && lr_alpha <= 1.0, "lr_alpha must lie in [0, 1]");
    detail::require(clip_norm > 0.0, "clip_norm must be positive");
  }

  friend bool operator==(const MaeConfig&, const MaeConfig&) = default;
};

inline nlohmann::json to_json(const MaeConfig& c) {
  return {{"feature_dim", c.feature_dim},
          {"grid", c.grid},
          {"encoder_dim", c.encoder_dim},
          {"decoder_dim", c.decoder_dim},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"heads", c.heads},
          {"mask_ratio", c.mask_ratio},
          {"dropout", c.dropout},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"shuffle_buffer", c.shuffle_buffer},
          {"initial_lr", c.initial_lr},
          {"lr_alpha", c.lr_alpha},
          {"clip_norm", c.clip_norm},
          {"beta1", c.adamw.beta1},
          {"beta2", c.adamw.beta2},
          {"adam_eps", c.adamw.eps},
          {"weight_decay", c.adamw.weight_decay},
          {"exclude_absent", c.exclude_absent},
          {"final_norm", c.final_norm}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline MaeConfig mae_config_from_json(const nlohmann::json& j, MaeConfig c = {}) {
  detail::require(j.is_object(), "MAE config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "feature_dim") c.feature_dim = v.get<std::size_t>();
      else if (key == "grid") c.grid = v.get<int>();
      else if (key == "encoder_dim") c.encoder_dim = v.get<std::size_t>();
      else if (key == "decoder_dim") c.decoder_dim = v.get<std::size_t>();
      else if (key == "encoder_layers") c.encoder_layers = v.get<std::size_t>();
      else if (key == "decoder_layers") c.decoder_layers = v.get<std::size_t>();
      else if (key == "heads") c.heads = v.get<std::size_t>();
      else if (key == "mask_ratio") c.mask_ratio = v.get<double>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "batch") c.batch = v.get<std::size_t>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "shuffle_buffer") c.shuffle_buffer = v.get<std::size_t>();
      else if (key == "initial_lr") c.initial_lr = v.get<double>();
      else if (key == "lr_alpha") c.lr_alpha = v.get<double>();
      else if (key == "clip_norm") c.clip_norm = v.get<double>();
      else if (key == "beta1") c.adamw.beta1 = v.get<double>();
      else if (key == "beta2") c.adamw.beta2 = v.get<double>();
      else if (key == "adam_eps") c.adamw.eps = v.get<double>();
      else if (key == "weight_decay") c.adamw.weight_decay = v.get<double>();
      else if (key == "exclude_absent") c.exclude_absent = v.get<bool>();
      else if (key == "final_norm") c.final_norm = v.get<bool>();
      else throw ValidationError("unknown MAE config key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad MAE config value: ") + e.what());
  }
  c.validate();
  return c;
}

inline void save_mae_config(const std::string& path, const MaeConfig& c) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path);
  out << to_json(c).dump(2) << '\n';
}

inline MaeConfig load_mae_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed JSON in " + path + ": " + e.what());
  }
  return mae_config_from_json(j);
}

}  // namespace s2vec::mae
