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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "s2vec/pipeline/config.hpp"
#include "s2vec/pipeline/stages.hpp"
#include "s2vec/pipeline/synth.hpp"
#include "test_util.hpp"

using namespace s2vec;
using namespace s2vec::pipeline;
using s2vec::testing::read_bytes;
using s2vec::testing::TempDir;
using s2vec::testing::write_text;

namespace {

SynthSpec small_synth() {
  SynthSpec s;
  s.feature_dim = 8;
  s.max_images = 3;
  s.box = {40.0, 41.0, -80.0, -79.0};
  s.label_fraction = 0.5;
  return s;
}

PipelineConfig small_config(const std::string& out) {
  PipelineConfig c;
  c.feature_dim = 8;
  c.synth = small_synth();
  c.mae.encoder_dim = 16;
  c.mae.decoder_dim = 8;
  c.mae.encoder_layers = 1;
  c.mae.decoder_layers = 1;
  c.mae.heads = 2;
  c.mae.epochs = 2;
  c.grid = {{16}, {1e-3}, {0.0}};
  c.probe.max_epochs = 10;
  c.eval_seeds = 2;
  c.out = out;
  c.sync();
  return c;
}

// Solves the normal equations in long double by Gauss-Jordan elimination.
double oracle_r2(const SynthData& d) {
  const std::size_t q = d.cells.front().latents.size() + 1;
  std::vector<std::vector<long double>> a(q, std::vector<long double>(q + 1, 0.0L));
  std::vector<double> ys;
  for (const auto& c : d.cells) {
    if (!c.labeled) continue;
    std::vector<long double> x{1.0L};
    for (double z : c.latents) x.push_back(z);
    for (std::size_t i = 0; i < q; ++i) {
      for (std::size_t j = 0; j < q; ++j) a[i][j] += x[i] * x[j];
      a[i][q] += x[i] * c.target;
    }
    ys.push_back(c.target);
  }
  for (std::size_t col = 0; col < q; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < q; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < q; ++r) {
      if (r == col) continue;
      const long double f = a[r][col] / a[col][col];
      for (std::size_t k = col; k <= q; ++k) a[r][k] -= f * a[col][k];
    }
  }
  std::vector<long double> beta(q);
  for (std::size_t i = 0; i < q; ++i) beta[i] = a[i][q] / a[i][i];
  long double mean = 0, ss_res = 0, ss_tot = 0;
  for (double y : ys) mean += y;
  mean /= ys.size();
  std::size_t k = 0;
  for (const auto& c : d.cells) {
    if (!c.labeled) continue;
    long double pred = beta[0];
    for (std::size_t i = 0; i + 1 < q; ++i) pred += beta[i + 1] * c.latents[i];
    ss_res += (ys[k] - pred) * (ys[k] - pred);
    ss_tot += (ys[k] - mean) * (ys[k] - mean);
    ++k;
  }
  return static_cast<double>(1.0L - ss_res / ss_tot);
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  TempDir log("cli_log");
  const std::string cmd = std::string(S2VEC_CLI) + " " + args + " > " + log.file("out.txt") + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = read_bytes(log.file("out.txt"));
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Synth, DeterministicFiles) {
  TempDir a("synth_a"), b("synth_b");
  write_synth(synth_generate(small_synth()), SynthPaths::in(a.path()));
  write_synth(synth_generate(small_synth()), SynthPaths::in(b.path()));
  for (const char* f : {"features.jsonl", "labels.jsonl", "external.jsonl", "synth.json"})
    EXPECT_EQ(read_bytes(a.file(f)), read_bytes(b.file(f))) << f;
  auto other = small_synth();
  other.seed = 1;
  TempDir c("synth_c");
  write_synth(synth_generate(other), SynthPaths::in(c.path()));
  EXPECT_NE(read_bytes(a.file("features.jsonl")), read_bytes(c.file("features.jsonl")));
}

TEST(Synth, CountsAndShapes) {
  const auto d = synth_generate(small_synth());
  EXPECT_EQ(d.images.size(), 3u);
  EXPECT_EQ(d.cells.size(), 3u * 256);
  for (const auto& c : d.cells) {
    EXPECT_EQ(c.cell.level(), 12);
    ASSERT_EQ(c.counts.size(), 8u);
    for (double v : c.counts) {
      EXPECT_GE(v, 0.0);
      EXPECT_EQ(v, std::round(v));
    }
    EXPECT_EQ(c.latents.size(), 5u);
    EXPECT_EQ(c.external.size(), 32u);
  }
  TempDir dir("synth_load");
  const auto paths = SynthPaths::in(dir.path());
  write_synth(d, paths);
  EXPECT_EQ(load_features(paths.features).size(), d.cells.size());
  const auto labels = downstream::load_labels(paths.labels, 12);
  std::size_t labeled = 0;
  for (const auto& c : d.cells) labeled += c.labeled;
  EXPECT_EQ(labels.size(), labeled);
}

TEST(Synth, OracleRegressionOnLatents) {
  auto s = small_synth();
  s.max_images = 8;
  s.noise = 0.1;
  const auto d = synth_generate(s);
  EXPECT_GT(d.oracle_r2, 0.95);
  EXPECT_NEAR(oracle_r2(d), d.oracle_r2, 1e-9);
}

TEST(Synth, Validation) {
  auto s = small_synth();
  s.latents = 0;
  EXPECT_THROW(synth_generate(s), ValidationError);
  s = small_synth();
  s.box = {41, 40, -80, -79};
  EXPECT_THROW(synth_generate(s), ValidationError);
  EXPECT_THROW(synth_spec_from_json(nlohmann::json{{"latnets", 3}}), ValidationError);
  EXPECT_EQ(synth_spec_from_json(to_json(small_synth())), small_synth());
}

TEST(PipelineConfig, JsonRoundTripAndHash) {
  auto c = small_config("x");
  c.fusion.mode = downstream::FusionMode::project_add;
  c.embed_mode = EmbedMode::contextual;
  c.external = {"a.jsonl"};
  const auto back = pipeline_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  auto moved = c;
  moved.out = "elsewhere";
  EXPECT_EQ(config_hash(moved), config_hash(c));
  auto seeded = c;
  seeded.seed = 9;
  EXPECT_NE(config_hash(seeded), config_hash(c));

  EXPECT_THROW(pipeline_config_from_json(nlohmann::json{{"sed", 1}}), ValidationError);
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json{{"mae", {{"grid", 4}}}}), ValidationError);
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json{{"embed_mode", "pooled"}}), ValidationError);
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json{{"image_level", 12}}).validate(), ValidationError);
  auto geo = small_config("x");
  geo.split = downstream::SplitKind::geographic;
  EXPECT_THROW(geo.validate(), ValidationError);
}

TEST(Pipeline, EndToEndResumableAndReproducible) {
  TempDir dir("pipe");
  const auto cfg = small_config(dir.file("run"));
  std::ostringstream log;
  StageContext ctx(cfg, &log);
  run_synth(ctx);
  const auto first = run_pipeline(ctx);
  ASSERT_EQ(first.size(), 6u);
  for (const auto& r : first) {
    EXPECT_FALSE(r.skipped) << r.stage;
    EXPECT_TRUE(std::filesystem::exists(r.artifact)) << r.stage;
    const auto meta = nlohmann::json::parse(read_bytes(meta_path(r.artifact).string()));
    EXPECT_EQ(meta["config_hash"], ctx.hash);
  }
  const std::string table = read_bytes(ctx.paths.embeddings().string());
  const std::string report = read_bytes(ctx.paths.report().string());

  // Everything is up to date on a rerun.
  for (const auto& r : run_pipeline(ctx)) EXPECT_TRUE(r.skipped) << r.stage;

  // Deleting only the final artifacts regenerates them identically.
  std::filesystem::remove(ctx.paths.embeddings());
  std::filesystem::remove(ctx.paths.report());
  const auto again = run_pipeline(ctx);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(again[i].skipped) << again[i].stage;
  EXPECT_FALSE(again[4].skipped);
  EXPECT_EQ(read_bytes(ctx.paths.embeddings().string()), table);
  EXPECT_EQ(read_bytes(ctx.paths.report().string()), report);

  // A second directory with the same (config, seed) gives the same bytes.
  auto cfg2 = cfg;
  cfg2.out = dir.file("run2");
  StageContext ctx2(cfg2, &log);
  run_synth(ctx2);
  run_pipeline(ctx2);
  EXPECT_EQ(read_bytes(ctx2.paths.embeddings().string()), table);
  EXPECT_EQ(read_bytes(ctx2.paths.report().string()), report);

  // A changed setting marks downstream stamps stale.
  auto cfg3 = cfg;
  cfg3.mae.epochs = 1;
  std::ostringstream log3;
  StageContext ctx3(cfg3, &log3);
  const auto third = run_pipeline(ctx3, false);
  EXPECT_TRUE(third[2].skipped);
  EXPECT_FALSE(third[3].skipped);
  EXPECT_NE(log3.str().find("stale"), std::string::npos);
}

TEST(Pipeline, MissingFeatureFileNamesStage) {
  TempDir dir("pipe_missing");
  auto cfg = small_config(dir.file("run"));
  cfg.features = dir.file("nope.jsonl");
  std::ostringstream log;
  StageContext ctx(cfg, &log);
  try {
    run_ingest(ctx);
    FAIL() << "expected an ingest error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("[ingest]"), std::string::npos) << e.what();
  }
}

TEST(Cli, HelpAndErrors) {
  std::string out;
  EXPECT_EQ(run_cli("--help", &out), 0);
  EXPECT_NE(out.find("rasterize"), std::string::npos);
  EXPECT_EQ(run_cli("eval --help"), 0);
  EXPECT_EQ(run_cli("stats --no-such-flag"), 1);
  EXPECT_EQ(run_cli("eval --location --no-location"), 1);
  EXPECT_EQ(run_cli("eval --fusion sum"), 1);
  EXPECT_EQ(run_cli(""), 1);
  TempDir dir("cli_err");
  EXPECT_EQ(run_cli("ingest --out " + dir.file("o") + " --features " + dir.file("missing.jsonl"), &out), 1);
  EXPECT_NE(out.find("[ingest]"), std::string::npos);
  write_text(dir.file("bad.jsonl"), "{\"token\": \"89c25\", \"counts\": [1, -1]}\n");
  EXPECT_EQ(run_cli("ingest --out " + dir.file("o") + " --features " + dir.file("bad.jsonl") + " --feature-dim 2"), 1);
}

TEST(Cli, StagesAndRouting) {
  TempDir dir("cli_run");
  const std::string out = dir.file("o");
  const std::string model = " --encoder-dim 16 --decoder-dim 8 --encoder-layers 1 --decoder-layers 1 --heads 2 --epochs 1";
  write_text(dir.file("cfg.json"), nlohmann::json{{"feature_dim", 8},
                                                  {"grid", {{"hidden", {8}}, {"lr", {1e-3}}, {"dropout", {0.0}}}},
                                                  {"probe", {{"max_epochs", 5}}},
                                                  {"eval_seeds", 2},
                                                  {"synth", {{"max_images", 2}, {"box", {40, 41, -80, -79}}}}}
                                       .dump());
  const std::string common = " --config " + dir.file("cfg.json") + " --out " + out + " --threads 1";
  ASSERT_EQ(run_cli("synth" + common), 0);
  ASSERT_EQ(run_cli("ingest" + common), 0);
  ASSERT_EQ(run_cli("stats" + common), 0);
  ASSERT_EQ(run_cli("rasterize" + common), 0);
  ASSERT_EQ(run_cli("pretrain" + common + model), 0);
  ASSERT_EQ(run_cli("embed" + common + model + " --embed-mode contextual"), 0);
  const auto prov = nlohmann::json::parse(read_bytes(out + "/embeddings.s2ve.provenance.json"));
  EXPECT_EQ(prov["mode"], "contextual");
  const auto table = load_embedding_table(out + "/embeddings.s2ve");
  EXPECT_EQ(table.dim(), 16u);
  EXPECT_EQ(table.size(), 512u);

  downstream::Region east = downstream::Region::box(39.0, 42.0, -79.6, -78.0);
  write_text(dir.file("region.json"), east.to_json().dump());
  ASSERT_EQ(run_cli("eval" + common + " --fusion project-add --proj-dim 8 --split geographic --region " +
                    dir.file("region.json") + " --external " + out + "/external.jsonl"),
            0);
  const auto rep = nlohmann::json::parse(read_bytes(out + "/report.json"));
  EXPECT_EQ(rep["split"], "geographic");
  EXPECT_EQ(rep["fusion"], "project-add");
  EXPECT_EQ(rep["seed_count"], 2);
  EXPECT_TRUE(std::filesystem::exists(out + "/report.tsv"));
}
