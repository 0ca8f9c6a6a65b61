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

// Hyperparameter sweep, per-seed retraining and the evaluation report.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2vec/downstream/labels.hpp"
#include "s2vec/downstream/metrics.hpp"
#include "s2vec/downstream/probe.hpp"
#include "s2vec/downstream/split.hpp"
#include "s2vec/error.hpp"
#include "s2vec/util/hash.hpp"
#include "s2vec/util/parallel.hpp"

namespace s2vec::downstream {

struct ProbeGrid {
  std::vector<std::size_t> hidden{64, 256, 1024};
  std::vector<double> lr{1e-4, 5e-4, 1e-3};
  std::vector<double> dropout{0.0, 0.2, 0.5};

  std::size_t size() const { return hidden.size() * lr.size() * dropout.size(); }

  void validate() const {
    detail::require(size() > 0, "probe sweep grid is empty");
    for (auto h : hidden) detail::require(h > 0, "hidden units must be positive");
    for (auto l : lr) detail::require(l > 0, "learning rates must be positive");
    for (auto d : dropout) detail::require(d >= 0 && d < 1, "dropout must lie in [0, 1)");
  }

  ProbeConfig at(std::size_t i, ProbeConfig base) const {
    base.dropout = dropout[i % dropout.size()];
    i /= dropout.size();
    base.lr = lr[i % lr.size()];
    i /= lr.size();
    base.hidden = hidden[i];
    return base;
  }
};

struct EvalOptions {
  SplitKind split = SplitKind::random;
  std::array<double, 3> fractions{0.6, 0.2, 0.2};
  Region region;  // geographic only
  ProbeGrid grid;
  ProbeConfig base;  // epochs, patience, batch, optimizer
  FusionSpec fusion;
  std::size_t seeds = 20;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::size_t threads = 1;
};

struct EvalReport {
  std::string split;
  std::string fusion;
  std::string config_hash;
  std::size_t seed_count = 0;
  ProbeConfig chosen;
  std::vector<double> grid_val_loss;  // selection-phase val MSE per grid point
  std::vector<double> r2, mae;        // per seed, scaled-target units
  std::vector<std::size_t> train_size, val_size, test_size;
  std::vector<std::string> scaler_fingerprint;
  double r2_mean = 0, r2_std = 0, mae_mean = 0, mae_std = 0;
};

// Mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

inline Split make_split(const EvalOptions& opt, std::span<const LatLng> centers, std::size_t seed_index) {
  if (opt.split == SplitKind::random) {
    return split_random(centers.size(), opt.fractions, derive_seed(opt.seed, seed_index, 0x73706c6974ULL));
  }
  return split_geographic(centers, opt.region, derive_seed(opt.seed, 0, 0x73706c6974ULL));
}

// Targets for all cells scaled with a scaler fitted on the train rows only.
inline std::pair<std::vector<double>, MinMaxScaler> scale_for_split(std::span<const double> raw, const Split& s) {
  std::vector<double> train;
  train.reserve(s.train.size());
  for (auto i : s.train) train.push_back(raw[i]);
  const auto scaler = MinMaxScaler::fit(train);
  return {scaler.transform(raw), scaler};
}

// Selects hyperparameters by validation loss on the first split, then
// retrains the chosen configuration once per seed (fresh random split per
// seed, or the fixed geographic split with varying probe seeds) and scores
// the test rows.
inline EvalReport sweep_and_evaluate(const ProbeInputs& in, std::span<const double> raw_targets,
                                     std::span<const LatLng> centers, const EvalOptions& opt) {
  opt.grid.validate();
  opt.base.validate();
  detail::require(opt.seeds >= 1, "need at least one evaluation seed");
  detail::require(raw_targets.size() == in.rows() && centers.size() == in.rows(),
                  "targets, centers and inputs disagree on the number of cells");
  if (!in.sources.empty()) {
    const auto dims = source_dims(in);
    fused_dim(opt.fusion, dims);
  }
  EvalReport rep;
  rep.split = to_string(opt.split);
  rep.fusion = to_string(opt.fusion.mode);
  rep.config_hash = opt.config_hash;
  rep.seed_count = opt.seeds;

  {
    const Split s = make_split(opt, centers, 0);
    const auto [y, scaler] = scale_for_split(raw_targets, s);
    rep.grid_val_loss.assign(opt.grid.size(), 0.0);
    parallel_chunks(opt.grid.size(), opt.threads, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t g = b; g < e; ++g) {
        ProbeConfig cfg = opt.grid.at(g, opt.base);
        cfg.seed = derive_seed(opt.seed, 0, 0x70726f6265ULL);
        rep.grid_val_loss[g] = train_probe(in, y, s.train, s.val, cfg, opt.fusion).best_val_loss;
      }
    });
    std::size_t best = 0;
    for (std::size_t g = 1; g < rep.grid_val_loss.size(); ++g)
      if (rep.grid_val_loss[g] < rep.grid_val_loss[best]) best = g;
    rep.chosen = opt.grid.at(best, opt.base);
  }

  const std::size_t n = opt.seeds;
  rep.r2.assign(n, 0);
  rep.mae.assign(n, 0);
  rep.train_size.assign(n, 0);
  rep.val_size.assign(n, 0);
  rep.test_size.assign(n, 0);
  rep.scaler_fingerprint.assign(n, "");
  parallel_chunks(n, opt.threads, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const Split s = make_split(opt, centers, i);
      const auto [y, scaler] = scale_for_split(raw_targets, s);
      ProbeConfig cfg = rep.chosen;
      cfg.seed = derive_seed(opt.seed, i, 0x70726f6265ULL);
      const auto probe = train_probe(in, y, s.train, s.val, cfg, opt.fusion);
      const auto pred = probe_predict(probe, in, s.test);
      std::vector<double> truth;
      truth.reserve(s.test.size());
      for (auto r : s.test) truth.push_back(y[r]);
      rep.r2[i] = metric_r2(pred, truth);
      rep.mae[i] = metric_mae(pred, truth);
      rep.train_size[i] = s.train.size();
      rep.val_size[i] = s.val.size();
      rep.test_size[i] = s.test.size();
      rep.scaler_fingerprint[i] = scaler.fingerprint();
    }
  });
  std::tie(rep.r2_mean, rep.r2_std) = mean_std(rep.r2);
  std::tie(rep.mae_mean, rep.mae_std) = mean_std(rep.mae);
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"split", r.split},
          {"fusion", r.fusion},
          {"config_hash", r.config_hash},
          {"seed_count", r.seed_count},
          {"chosen", {{"hidden", r.chosen.hidden}, {"lr", r.chosen.lr}, {"dropout", r.chosen.dropout}}},
          {"grid_val_loss", r.grid_val_loss},
          {"per_seed",
           {{"r2", r.r2},
            {"mae", r.mae},
            {"train_size", r.train_size},
            {"val_size", r.val_size},
            {"test_size", r.test_size},
            {"scaler_fingerprint", r.scaler_fingerprint}}},
          {"aggregate", {{"r2_mean", r.r2_mean}, {"r2_std", r.r2_std}, {"mae_mean", r.mae_mean}, {"mae_std", r.mae_std}}}};
}

inline std::string report_tsv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out.precision(17);
  out << "split\tfusion\tseed\tr2\tmae\ttest_size\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.r2.size(); ++i)
      out << r.split << '\t' << r.fusion << '\t' << i << '\t' << r.r2[i] << '\t' << r.mae[i] << '\t' << r.test_size[i]
          << '\n';
  return out.str();
}

}  // namespace s2vec::downstream
