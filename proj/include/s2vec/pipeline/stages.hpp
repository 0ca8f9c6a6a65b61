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

// Stage runners: synth, ingest, stats, rasterize, pretrain, embed, eval.
// Each stage writes its artifact plus a <artifact>.meta.json stamp holding
// the config hash and a key over the stage's inputs and settings. A stage
// whose stamp matches is skipped; a mismatched stamp is reported and the
// artifact rebuilt.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2vec/downstream/encode.hpp"
#include "s2vec/downstream/evaluate.hpp"
#include "s2vec/downstream/labels.hpp"
#include "s2vec/error.hpp"
#include "s2vec/ingest.hpp"
#include "s2vec/mae/embedding.hpp"
#include "s2vec/mae/train.hpp"
#include "s2vec/numerics/checkpoint.hpp"
#include "s2vec/pipeline/config.hpp"
#include "s2vec/pipeline/synth.hpp"
#include "s2vec/raster.hpp"
#include "s2vec/util/hash.hpp"

namespace s2vec::pipeline {

namespace fs = std::filesystem;

struct Artifacts {
  fs::path dir;

  fs::path features(const PipelineConfig& c) const { return c.features.empty() ? dir / "features.jsonl" : fs::path(c.features); }
  fs::path labels(const PipelineConfig& c) const { return c.labels.empty() ? dir / "labels.jsonl" : fs::path(c.labels); }
  fs::path synth_summary() const { return dir / "synth.json"; }
  fs::path ingest() const { return dir / "ingest.json"; }
  fs::path stats() const { return dir / "norm_stats.json"; }
  fs::path raster() const { return dir / "raster.s2vr"; }
  fs::path checkpoint() const { return dir / "model.s2vp"; }
  fs::path history() const { return dir / "pretrain.json"; }
  fs::path embeddings() const { return dir / "embeddings.s2ve"; }
  fs::path report() const { return dir / "report.json"; }
  fs::path report_tsv() const { return dir / "report.tsv"; }
};

inline fs::path meta_path(const fs::path& artifact) { return fs::path(artifact.string() + ".meta.json"); }

struct StageContext {
  PipelineConfig cfg;
  Artifacts paths;
  std::string hash;
  std::ostream* log = &std::cerr;
  bool force = false;

  explicit StageContext(PipelineConfig c, std::ostream* l = &std::cerr)
      : cfg(std::move(c)), paths{fs::path(cfg.out)}, hash(config_hash(cfg)), log(l) {}

  void note(const std::string& msg) const {
    if (log) *log << msg << '\n';
  }
};

struct StageResult {
  std::string stage;
  fs::path artifact;
  bool skipped = false;
};

namespace stage_detail {

inline std::string file_hash(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) throw ValidationError("[" + stage + "] missing input file: " + p.string());
  return sha256_file(p.string());
}

// Runs body unless the artifact's stamp matches `key`; wraps failures with
// the stage name.
inline StageResult run_stage(const StageContext& ctx, const std::string& stage, const fs::path& artifact,
                             const nlohmann::json& key_material, const std::function<void()>& body) {
  const std::string key = sha256_hex(nlohmann::json{{"stage", stage}, {"inputs", key_material}}.dump());
  const fs::path meta = meta_path(artifact);
  if (!ctx.force && fs::exists(artifact) && fs::exists(meta)) {
    nlohmann::json m;
    std::ifstream in(meta);
    try {
      in >> m;
    } catch (const nlohmann::json::exception&) {
      m = nlohmann::json::object();
    }
    if (m.value("stage_key", "") == key) {
      ctx.note("[" + stage + "] up to date: " + artifact.string());
      return {stage, artifact, true};
    }
    ctx.note("[" + stage + "] warning: stale artifact " + artifact.string() + " (stamped by config " +
             m.value("config_hash", std::string("?")) + ", current " + ctx.hash + "); rebuilding");
  }
  try {
    fs::create_directories(ctx.paths.dir);
    body();
  } catch (const ValidationError& e) {
    throw ValidationError("[" + stage + "] " + e.what());
  } catch (const RuntimeFailure& e) {
    throw RuntimeFailure("[" + stage + "] " + e.what());
  } catch (const std::exception& e) {
    throw RuntimeFailure("[" + stage + "] " + e.what());
  }
  std::ofstream out(meta, std::ios::binary);
  if (!out) throw RuntimeFailure("[" + stage + "] cannot write " + meta.string());
  out << nlohmann::json{{"stage", stage}, {"config_hash", ctx.hash}, {"stage_key", key}, {"inputs", key_material}}.dump(2)
      << '\n';
  ctx.note("[" + stage + "] wrote " + artifact.string());
  return {stage, artifact, false};
}

inline void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

inline std::vector<CellFeatures> load_checked_features(const StageContext& ctx) {
  auto cells = load_features(ctx.paths.features(ctx.cfg).string(), ctx.cfg.feature_dim);
  detail::require(!cells.empty(), "feature file " + ctx.paths.features(ctx.cfg).string() + " is empty");
  detail::require(cells.front().cell().level() == ctx.cfg.patch_level,
                  "feature cells are at level " + std::to_string(cells.front().cell().level()) + ", expected patch level " +
                      std::to_string(ctx.cfg.patch_level));
  return cells;
}

}  // namespace stage_detail

inline StageResult run_synth(const StageContext& ctx) {
  const auto& c = ctx.cfg;
  const Artifacts& p = ctx.paths;
  return stage_detail::run_stage(ctx, "synth", p.synth_summary(), to_json(c.synth), [&] {
    const auto data = synth_generate(c.synth);
    SynthPaths out = SynthPaths::in(p.dir);
    out.features = p.features(c).string();
    out.labels = p.labels(c).string();
    write_synth(data, out);
    ctx.note("[synth] " + std::to_string(data.cells.size()) + " cells in " + std::to_string(data.images.size()) +
             " images, oracle R^2 " + std::to_string(data.oracle_r2));
  });
}

inline StageResult run_ingest(const StageContext& ctx) {
  const auto& c = ctx.cfg;
  const auto fh = stage_detail::file_hash(ctx.paths.features(c), "ingest");
  const nlohmann::json key{{"features", fh}, {"feature_dim", c.feature_dim}, {"patch_level", c.patch_level}};
  return stage_detail::run_stage(ctx, "ingest", ctx.paths.ingest(), key, [&] {
    const auto cells = stage_detail::load_checked_features(ctx);
    stage_detail::write_json(ctx.paths.ingest(), {{"cells", cells.size()},
                                                  {"feature_dim", c.feature_dim},
                                                  {"patch_level", c.patch_level},
                                                  {"features_sha256", fh},
                                                  {"config_hash", ctx.hash}});
  });
}

inline StageResult run_stats(const StageContext& ctx) {
  const auto& c = ctx.cfg;
  const nlohmann::json key{{"features", stage_detail::file_hash(ctx.paths.features(c), "stats")},
                           {"feature_dim", c.feature_dim},
                           {"threads", c.threads}};
  return stage_detail::run_stage(ctx, "stats", ctx.paths.stats(), key, [&] {
    const auto cells = stage_detail::load_checked_features(ctx);
    std::vector<NormStats> shards(chunk_count(cells.size(), c.threads));
    parallel_chunks(cells.size(), c.threads, [&](std::size_t t, std::size_t begin, std::size_t end) {
      shards[t] = NormStats(c.feature_dim);
      for (std::size_t i = begin; i < end; ++i) shards[t].add(cells[i].counts);
    });
    NormStats stats(c.feature_dim);
    for (const auto& s : shards) stats.merge(s);
    save_norm_stats(ctx.paths.stats().string(), stats);
  });
}

inline StageResult run_rasterize(const StageContext& ctx) {
  const auto& c = ctx.cfg;
  const nlohmann::json key{{"features", stage_detail::file_hash(ctx.paths.features(c), "rasterize")},
                           {"stats", stage_detail::file_hash(ctx.paths.stats(), "rasterize")},
                           {"image_level", c.image_level},
                           {"patch_level", c.patch_level},
                           {"min_present", c.min_present}};
  return stage_detail::run_stage(ctx, "rasterize", ctx.paths.raster(), key, [&] {
    const auto cells = stage_detail::load_checked_features(ctx);
    const auto stats = load_norm_stats(ctx.paths.stats().string());
    const auto ds = build_dataset(std::span<const CellFeatures>(cells), stats, c.image_level, c.patch_level,
                                  c.min_present, c.threads);
    detail::require(!ds.images.empty(), "no image-level cell passed the min_present filter");
    save_raster_dataset(ctx.paths.raster().string(), ds);
    ctx.note("[rasterize] " + std::to_string(ds.images.size()) + " images");
  });
}

inline StageResult run_pretrain(const StageContext& ctx) {
  const auto& c = ctx.cfg;
  const nlohmann::json key{{"raster", stage_detail::file_hash(ctx.paths.raster(), "pretrain")},
                           {"mae", to_json(c.mae)},
                           {"seed", c.seed},
                           {"threads", c.threads}};
  return stage_detail::run_stage(ctx, "pretrain", ctx.paths.checkpoint(), key, [&] {
    const auto ds = load_raster_dataset(ctx.paths.raster().string());
    mae::PretrainOptions opts;
    opts.threads = c.threads;
    opts.on_epoch = [&](std::size_t epoch, double loss) {
      ctx.note("[pretrain] epoch " + std::to_string(epoch) + "/" + std::to_string(c.mae.epochs) + " masked MSE " +
               std::to_string(loss));
    };
    const auto res = mae::pretrain<float>(ds, c.mae, c.seed, opts);
    save_checkpoint(ctx.paths.checkpoint().string(), res.params);
    mae::save_mae_config(ctx.paths.checkpoint().string() + ".config.json", c.mae);
    stage_detail::write_json(ctx.paths.history(), {{"loss_history", res.loss_history},
                                                   {"mean_predictor_first_epoch", mae::mean_predictor_loss(ds, c.mae, c.seed, 0)},
                                                   {"config_hash", ctx.hash}});
  });
}

inline StageResult run_embed(const StageContext& ctx) {
  const auto& c = ctx.cfg;
  nlohmann::json key{{"checkpoint", stage_detail::file_hash(ctx.paths.checkpoint(), "embed")},
                     {"mode", to_string(c.embed_mode)}};
  if (c.embed_mode == EmbedMode::patch) {
    key["features"] = stage_detail::file_hash(ctx.paths.features(c), "embed");
    key["stats"] = stage_detail::file_hash(ctx.paths.stats(), "embed");
  } else {
    key["raster"] = stage_detail::file_hash(ctx.paths.raster(), "embed");
    key["mae"] = to_json(c.mae);
  }
  return stage_detail::run_stage(ctx, "embed", ctx.paths.embeddings(), key, [&] {
    const auto params = load_checkpoint<float>(ctx.paths.checkpoint().string());
    mae::check_params(params, c.mae);
    EmbeddingTable table;
    if (c.embed_mode == EmbedMode::patch) {
      const auto cells = stage_detail::load_checked_features(ctx);
      const auto stats = load_norm_stats(ctx.paths.stats().string());
      table = mae::extract_embeddings(std::span<const CellFeatures>(cells), stats, params, c.threads);
    } else {
      const auto ds = load_raster_dataset(ctx.paths.raster().string());
      table = mae::extract_contextual_embeddings(ds, params, c.mae, c.embed_mode == EmbedMode::image, c.threads);
    }
    save_embedding_table(ctx.paths.embeddings().string(), table);
    stage_detail::write_json(fs::path(ctx.paths.embeddings().string() + ".provenance.json"),
                             {{"config_hash", ctx.hash},
                              {"checkpoint_sha256", key["checkpoint"]},
                              {"mode", to_string(c.embed_mode)},
                              {"cells", table.size()},
                              {"dim", table.dim()}});
  });
}

// Rows of `table` re-keyed to the labeled cells, looking each cell up at the
// table's level (image-level tables serve every patch inside the image).
inline EmbeddingTable align_to_cells(const EmbeddingTable& table, std::span<const downstream::LabeledCell> cells) {
  if (table.empty()) return table;
  const int level = CellId::from_raw(table.ids().front()).level();
  const int cell_level = cells.empty() ? level : cells.front().cell().level();
  if (level == cell_level) return table;
  detail::require(level < cell_level, "embedding table is finer than the labeled cells");
  EmbeddingTable out(table.dim());
  for (const auto& c : cells) {
    const float* v = table.find(c.cell().parent(level).raw());
    if (v) out.append(c.cell().raw(), std::span<const float>(v, table.dim()));
  }
  out.finalize();
  return out;
}

inline downstream::EvalOptions eval_options(const StageContext& ctx) {
  const auto& c = ctx.cfg;
  downstream::EvalOptions opt;
  opt.split = c.split;
  opt.fractions = c.fractions;
  if (c.split == downstream::SplitKind::geographic) opt.region = downstream::load_region(c.region);
  opt.grid = c.grid;
  opt.base = c.probe;
  opt.fusion = c.fusion;
  opt.seeds = c.eval_seeds;
  opt.seed = c.seed;
  opt.config_hash = ctx.hash;
  opt.threads = c.threads;
  return opt;
}

inline StageResult run_eval(const StageContext& ctx) {
  const auto& c = ctx.cfg;
  nlohmann::json key{{"labels", stage_detail::file_hash(ctx.paths.labels(c), "eval")},
                     {"config", [&] {
                        auto j = to_json(c);
                        nlohmann::json k;
                        for (const char* f : {"probe", "grid", "fusion", "split", "fractions", "eval_seeds", "seed",
                                              "patch_level", "use_s2vec"})
                          k[f] = j[f];
                        return k;
                      }()}};
  if (c.use_s2vec) key["s2vec"] = stage_detail::file_hash(ctx.paths.embeddings(), "eval");
  for (const auto& e : c.external) key["external"].push_back(stage_detail::file_hash(e, "eval"));
  if (c.split == downstream::SplitKind::geographic) key["region"] = stage_detail::file_hash(c.region, "eval");
  return stage_detail::run_stage(ctx, "eval", ctx.paths.report(), key, [&] {
    const auto cells = downstream::load_labels(ctx.paths.labels(c).string(), c.patch_level);
    std::vector<EmbeddingTable> tables;
    if (c.use_s2vec) tables.push_back(align_to_cells(load_embedding_table(ctx.paths.embeddings().string()), cells));
    for (const auto& e : c.external) tables.push_back(downstream::load_external_embeddings(e, c.patch_level));
    std::vector<const EmbeddingTable*> ptrs;
    for (const auto& t : tables) ptrs.push_back(&t);
    const auto in = downstream::build_probe_inputs(cells, ptrs, c.fusion);
    std::vector<double> targets;
    std::vector<LatLng> centers;
    for (const auto& cell : cells) {
      targets.push_back(cell.target);
      centers.push_back(cell_center(cell.cell()));
    }
    const auto rep = downstream::sweep_and_evaluate(in, targets, centers, eval_options(ctx));
    stage_detail::write_json(ctx.paths.report(), to_json(rep));
    std::ofstream tsv(ctx.paths.report_tsv(), std::ios::binary);
    if (!tsv) throw RuntimeFailure("cannot write " + ctx.paths.report_tsv().string());
    tsv << downstream::report_tsv({rep});
    ctx.note("[eval] R^2 " + std::to_string(rep.r2_mean) + " +- " + std::to_string(rep.r2_std) + ", MAE " +
             std::to_string(rep.mae_mean) + " +- " + std::to_string(rep.mae_std) + " over " +
             std::to_string(rep.seed_count) + " seeds");
  });
}

// ingest -> stats -> rasterize -> pretrain -> embed -> (eval).
inline std::vector<StageResult> run_pipeline(const StageContext& ctx, bool with_eval = true) {
  ctx.cfg.validate();
  std::vector<StageResult> out;
  out.push_back(run_ingest(ctx));
  out.push_back(run_stats(ctx));
  out.push_back(run_rasterize(ctx));
  out.push_back(run_pretrain(ctx));
  out.push_back(run_embed(ctx));
  if (with_eval) out.push_back(run_eval(ctx));
  return out;
}

}  // namespace s2vec::pipeline
