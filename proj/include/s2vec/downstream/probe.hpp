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

// Two-layer MLP regression probe with optional multi-source fusion,
// trained with AdamW and validation-loss early stopping.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "s2vec/downstream/encode.hpp"
#include "s2vec/downstream/labels.hpp"
#include "s2vec/error.hpp"
#include "s2vec/mae/embedding.hpp"
#include "s2vec/numerics/autodiff.hpp"
#include "s2vec/numerics/optim.hpp"
#include "s2vec/numerics/layers.hpp"
#include "s2vec/numerics/params.hpp"
#include "s2vec/util/hash.hpp"

namespace s2vec::downstream {

enum class FusionMode { concat, weighted_add, project_add };

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::concat: return "concat";
    case FusionMode::weighted_add: return "weighted-add";
    case FusionMode::project_add: return "project-add";
  }
  return "?";
}

inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "concat") return FusionMode::concat;
  if (s == "weighted-add") return FusionMode::weighted_add;
  if (s == "project-add") return FusionMode::project_add;
  throw ValidationError("unknown fusion mode '" + s + "' (expected concat, weighted-add or project-add)");
}

struct FusionSpec {
  FusionMode mode = FusionMode::concat;
  std::size_t proj_dim = 256;   // project-add only
  bool location = false;        // append the location encoding
  bool loc_per_source = false;  // append it to every source before fusion instead of after
  LocationScales scales{};
};

// Row-aligned model inputs for N labeled cells.
struct ProbeInputs {
  std::vector<Tensor<float>> sources;  // [N, d_k] each
  Tensor<float> location;              // [N, 4S], empty unless appended after fusion

  std::size_t rows() const { return sources.empty() ? location.rows() : sources.front().rows(); }
};

// Looks every cell up in each source; a missing cell is an error.
inline ProbeInputs build_probe_inputs(std::span<const LabeledCell> cells, std::span<const EmbeddingTable* const> tables,
                                      const FusionSpec& spec) {
  detail::require(!cells.empty(), "no labeled cells");
  detail::require(!tables.empty() || spec.location, "probe needs at least one embedding source or the location encoding");
  detail::require(!(spec.loc_per_source && tables.empty()), "per-source location encoding needs a source");
  const std::size_t n = cells.size();
  std::vector<std::vector<double>> loc;
  if (spec.location) {
    loc.reserve(n);
    for (const auto& c : cells) loc.push_back(location_encode(cell_center(c.cell()), spec.scales));
  }
  const std::size_t ld = spec.location ? 4 * spec.scales.count : 0;
  ProbeInputs in;
  for (std::size_t k = 0; k < tables.size(); ++k) {
    const auto& t = *tables[k];
    const std::size_t extra = spec.loc_per_source ? ld : 0;
    Tensor<float> m = Tensor<float>::matrix(n, t.dim() + extra);
    for (std::size_t i = 0; i < n; ++i) {
      const float* v = t.find(cells[i].cell().raw());
      if (!v) throw ValidationError("cell " + cells[i].token + " missing from embedding source " + std::to_string(k));
      std::copy_n(v, t.dim(), m.data() + i * m.cols());
      for (std::size_t e = 0; e < extra; ++e) m.at(i, t.dim() + e) = static_cast<float>(loc[i][e]);
    }
    in.sources.push_back(std::move(m));
  }
  if (spec.location && !spec.loc_per_source) {
    in.location = Tensor<float>::matrix(n, ld);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t e = 0; e < ld; ++e) in.location.at(i, e) = static_cast<float>(loc[i][e]);
  }
  return in;
}

struct ProbeConfig {
  std::size_t hidden = 256;
  double dropout = 0.0;
  double lr = 1e-3;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::size_t batch = 64;
  AdamWConfig adamw{};
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(hidden > 0, "probe hidden units must be positive");
    detail::require(dropout >= 0 && dropout < 1, "probe dropout must lie in [0, 1)");
    detail::require(lr > 0, "probe learning rate must be positive");
    detail::require(max_epochs >= 1 && patience >= 1 && batch >= 1, "probe epochs, patience and batch must be >= 1");
  }
};

// Fusion output width for the given source widths.
inline std::size_t fused_dim(const FusionSpec& spec, std::span<const std::size_t> dims) {
  if (dims.empty()) return 0;
  switch (spec.mode) {
    case FusionMode::concat: {
      std::size_t s = 0;
      for (auto d : dims) s += d;
      return s;
    }
    case FusionMode::weighted_add:
      for (auto d : dims) {
        detail::require(d == dims[0], "weighted-add needs equal source dims, got " + std::to_string(dims[0]) +
                                          " and " + std::to_string(d));
      }
      return dims[0];
    case FusionMode::project_add:
      detail::require(spec.proj_dim > 0, "project-add needs a positive projection dim");
      return spec.proj_dim;
  }
  return 0;
}

inline std::vector<std::size_t> source_dims(const ProbeInputs& in) {
  std::vector<std::size_t> d;
  for (const auto& s : in.sources) d.push_back(s.cols());
  return d;
}

namespace probe_detail {

inline Tensor<float> glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor<float> t = Tensor<float>::matrix(in, out);
  for (auto& v : t.values()) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * lim);
  return t;
}

inline Tensor<float> gather(const Tensor<float>& m, std::span<const std::size_t> rows) {
  Tensor<float> out = Tensor<float>::matrix(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(m.data() + rows[r] * m.cols(), m.cols(), out.data() + r * m.cols());
  return out;
}

}  // namespace probe_detail

// Fusion parameters ("fuse.*") followed by the MLP ("fc1", "fc2").
inline ParamSet<float> init_probe_params(const FusionSpec& spec, std::span<const std::size_t> dims,
                                         std::size_t loc_dim, std::size_t hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamSet<float> p;
  const std::size_t fd = fused_dim(spec, dims);
  if (dims.size() > 0 && spec.mode == FusionMode::weighted_add) {
    for (std::size_t k = 0; k < dims.size(); ++k) p.add("fuse.w" + std::to_string(k), Tensor<float>::scalar(1.0f));
  }
  if (dims.size() > 0 && spec.mode == FusionMode::project_add) {
    for (std::size_t k = 0; k < dims.size(); ++k) {
      p.add("fuse.proj" + std::to_string(k) + ".w", probe_detail::glorot(dims[k], spec.proj_dim, rng));
      p.add("fuse.proj" + std::to_string(k) + ".b", Tensor<float>::vector(spec.proj_dim));
    }
  }
  const std::size_t in = fd + loc_dim;
  detail::require(in > 0, "probe input is empty");
  p.add("fc1.w", probe_detail::glorot(in, hidden, rng));
  p.add("fc1.b", Tensor<float>::vector(hidden));
  p.add("fc2.w", probe_detail::glorot(hidden, 1, rng));
  p.add("fc2.b", Tensor<float>::vector(1));
  return p;
}

// Fused representation of a batch of sources (constants on the tape).
template <typename T>
ad::Var<T> fuse(Tape<T>& tape, const std::vector<ad::Var<T>>& sources, const FusionSpec& spec,
                const ParamSet<T>& params, std::vector<Tensor<T>>* grads) {
  detail::require(!sources.empty(), "fusion needs at least one source");
  auto bind = ad::param_binder(tape, params, grads);
  switch (spec.mode) {
    case FusionMode::concat:
      return sources.size() == 1 ? sources[0] : ad::concat_cols(tape, sources);
    case FusionMode::weighted_add: {
      ad::Var<T> acc = ad::mul_scalar(tape, sources[0], bind("fuse.w0"));
      for (std::size_t k = 1; k < sources.size(); ++k)
        acc = ad::add(tape, acc, ad::mul_scalar(tape, sources[k], bind("fuse.w" + std::to_string(k))));
      return acc;
    }
    case FusionMode::project_add: {
      ad::Var<T> acc{};
      for (std::size_t k = 0; k < sources.size(); ++k) {
        const std::string pre = "fuse.proj" + std::to_string(k);
        const auto h = ad::gelu(tape, ad::linear(tape, sources[k], bind(pre + ".w"), bind(pre + ".b")));
        acc = k == 0 ? h : ad::add(tape, acc, h);
      }
      return acc;
    }
  }
  throw ValidationError("unknown fusion mode");
}

struct TrainedProbe {
  FusionSpec fusion;
  ProbeConfig config;
  ParamSet<float> params;  // best-validation parameters
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;  // 1-based
  std::vector<double> val_history;
};

namespace probe_detail {

// Predictions [B, 1] for the given rows.
inline ad::Var<float> forward(Tape<float>& tape, const ProbeInputs& in, std::span<const std::size_t> rows,
                              const FusionSpec& spec, const ParamSet<float>& params, std::vector<Tensor<float>>* grads,
                              double dropout, std::mt19937_64* rng) {
  std::vector<ad::Var<float>> parts;
  if (!in.sources.empty()) {
    std::vector<ad::Var<float>> srcs;
    for (const auto& s : in.sources) srcs.push_back(tape.constant(gather(s, rows)));
    parts.push_back(fuse(tape, srcs, spec, params, grads));
  }
  if (!in.location.empty()) parts.push_back(tape.constant(gather(in.location, rows)));
  const ad::Var<float> x = parts.size() == 1 ? parts[0] : ad::concat_cols(tape, parts);
  auto bind = ad::param_binder(tape, params, grads);
  ad::Var<float> h = ad::gelu(tape, ad::linear(tape, x, bind("fc1.w"), bind("fc1.b")));
  h = ad::dropout(tape, h, dropout, rng);
  return ad::linear(tape, h, bind("fc2.w"), bind("fc2.b"));
}

inline Tensor<float> column(std::span<const double> targets, std::span<const std::size_t> rows) {
  Tensor<float> t = Tensor<float>::matrix(rows.size(), 1);
  for (std::size_t r = 0; r < rows.size(); ++r) t[r] = static_cast<float>(targets[rows[r]]);
  return t;
}

}  // namespace probe_detail

inline std::vector<double> probe_predict(const TrainedProbe& probe, const ProbeInputs& in,
                                         std::span<const std::size_t> rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  constexpr std::size_t kChunk = 4096;
  for (std::size_t b = 0; b < rows.size(); b += kChunk) {
    const auto sub = rows.subspan(b, std::min(kChunk, rows.size() - b));
    Tape<float> tape;
    const auto y = probe_detail::forward(tape, in, sub, probe.fusion, probe.params, nullptr, 0.0, nullptr);
    for (float v : tape.value(y).values()) out.push_back(v);
  }
  return out;
}

inline double probe_mse(const TrainedProbe& probe, const ProbeInputs& in, std::span<const double> targets,
                        std::span<const std::size_t> rows) {
  const auto pred = probe_predict(probe, in, rows);
  double acc = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) acc += (pred[r] - targets[rows[r]]) * (pred[r] - targets[rows[r]]);
  return acc / static_cast<double>(rows.size());
}

// Trains on `train`, evaluates MSE on `val` after every epoch, stops once
// the val loss has not improved for `patience` epochs and keeps the best
// parameters. Targets are indexed like the input rows.
inline TrainedProbe train_probe(const ProbeInputs& in, std::span<const double> targets,
                                std::span<const std::size_t> train, std::span<const std::size_t> val,
                                const ProbeConfig& cfg, const FusionSpec& fusion) {
  cfg.validate();
  detail::require(!train.empty() && !val.empty(), "probe needs nonempty train and validation sets");
  detail::require(targets.size() == in.rows(), "targets and inputs disagree on the number of cells");
  const auto dims = source_dims(in);
  TrainedProbe probe;
  probe.fusion = fusion;
  probe.config = cfg;
  probe.params = init_probe_params(fusion, dims, in.location.empty() ? 0 : in.location.cols(), cfg.hidden, cfg.seed);
  ParamSet<float> current = probe.params;
  auto state = OptimizerState<float>::for_params(current.values(), cfg.adamw);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x70726f6265ULL));
  std::vector<std::size_t> order(train.begin(), train.end());
  std::size_t bad = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::span<const std::size_t> rows(order.data() + b, std::min(cfg.batch, order.size() - b));
      auto grads = current.zero_grads();
      Tape<float> tape;
      const auto y = probe_detail::forward(tape, in, rows, fusion, current, &grads, cfg.dropout, &rng);
      const auto loss = ad::mse(tape, y, probe_detail::column(targets, rows));
      detail::require<RuntimeFailure>(std::isfinite(tape.value(loss)[0]),
                                      "probe loss is not finite at epoch " + std::to_string(epoch));
      tape.backward(loss);
      adamw_step(current.values(), grads, state, cfg.lr);
    }
    TrainedProbe view;
    view.fusion = fusion;
    view.params = current;
    const double vl = probe_mse(view, in, targets, val);
    detail::require<RuntimeFailure>(std::isfinite(vl), "probe validation loss is not finite");
    probe.val_history.push_back(vl);
    if (vl < probe.best_val_loss) {
      probe.best_val_loss = vl;
      probe.best_epoch = epoch;
      probe.params = current;
      bad = 0;
    } else if (++bad >= cfg.patience) {
      break;
    }
  }
  return probe;
}

}  // namespace s2vec::downstream
