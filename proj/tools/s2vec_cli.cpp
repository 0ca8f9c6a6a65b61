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

// s2vec command-line driver: one subcommand per pipeline stage plus `run`.
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "s2vec/error.hpp"
#include "s2vec/pipeline/config.hpp"
#include "s2vec/pipeline/stages.hpp"

namespace {

using s2vec::pipeline::PipelineConfig;

template <typename T>
struct Flag {
  std::optional<T> value;
  void apply(T& target) const {
    if (value) target = *value;
  }
};

// Every override flag; each subcommand registers the groups it needs.
struct Overrides {
  std::string config;
  Flag<std::uint64_t> seed;
  Flag<std::string> out;
  Flag<std::size_t> threads;
  bool force = false;

  Flag<std::string> features, labels, region;
  Flag<int> image_level, patch_level;
  Flag<std::size_t> feature_dim;
  Flag<double> min_present;

  Flag<std::size_t> epochs, batch, encoder_dim, decoder_dim, encoder_layers, decoder_layers, heads;
  Flag<double> lr, mask_ratio;

  Flag<std::string> embed_mode;

  Flag<std::string> fusion, split;
  Flag<std::size_t> proj_dim, eval_seeds;
  std::vector<std::string> external;
  bool location = false, no_location = false, loc_per_source = false, no_s2vec = false;

  Flag<std::size_t> latents, images;
  Flag<double> noise, label_fraction;
  std::vector<double> box;

  PipelineConfig build() const {
    PipelineConfig c;
    if (!config.empty()) c = s2vec::pipeline::load_pipeline_config(config);
    seed.apply(c.seed);
    out.apply(c.out);
    threads.apply(c.threads);
    features.apply(c.features);
    labels.apply(c.labels);
    region.apply(c.region);
    image_level.apply(c.image_level);
    patch_level.apply(c.patch_level);
    feature_dim.apply(c.feature_dim);
    min_present.apply(c.min_present);
    epochs.apply(c.mae.epochs);
    batch.apply(c.mae.batch);
    encoder_dim.apply(c.mae.encoder_dim);
    decoder_dim.apply(c.mae.decoder_dim);
    encoder_layers.apply(c.mae.encoder_layers);
    decoder_layers.apply(c.mae.decoder_layers);
    heads.apply(c.mae.heads);
    lr.apply(c.mae.initial_lr);
    mask_ratio.apply(c.mae.mask_ratio);
    if (embed_mode.value) c.embed_mode = s2vec::pipeline::embed_mode_from_string(*embed_mode.value);
    if (fusion.value) c.fusion.mode = s2vec::downstream::fusion_mode_from_string(*fusion.value);
    if (split.value) c.split = s2vec::downstream::split_kind_from_string(*split.value);
    proj_dim.apply(c.fusion.proj_dim);
    eval_seeds.apply(c.eval_seeds);
    if (!external.empty()) c.external = external;
    if (location || loc_per_source) c.fusion.location = true;
    if (no_location) c.fusion.location = false;
    if (loc_per_source) c.fusion.loc_per_source = true;
    if (no_s2vec) c.use_s2vec = false;
    latents.apply(c.synth.latents);
    images.apply(c.synth.max_images);
    noise.apply(c.synth.noise);
    label_fraction.apply(c.synth.label_fraction);
    if (!box.empty()) c.synth.box = {box[0], box[1], box[2], box[3]};
    c.sync();
    c.synth.validate();
    return c;
  }
};

template <typename T>
void add(CLI::App* app, const std::string& name, Flag<T>& f, const std::string& help) {
  app->add_option_function<T>(name, [&f](const T& v) { f.value = v; }, help);
}

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "pipeline config JSON")->check(CLI::ExistingFile);
  add(app, "--seed", o.seed, "global seed");
  add(app, "--out", o.out, "output directory");
  add(app, "--threads", o.threads, "worker threads (1 = bit-reproducible mode)");
  app->add_flag("--force", o.force, "rebuild even when the artifact stamp matches");
}

void add_inputs(CLI::App* app, Overrides& o) {
  add(app, "--features", o.features, "feature JSONL (default <out>/features.jsonl)");
  add(app, "--feature-dim", o.feature_dim, "features per cell (F)");
  add(app, "--patch-level", o.patch_level, "patch cell level (l)");
}

void add_raster(CLI::App* app, Overrides& o) {
  add(app, "--image-level", o.image_level, "image cell level (l')");
  add(app, "--min-present", o.min_present, "drop images with fewer present patches than this fraction");
}

void add_mae(CLI::App* app, Overrides& o) {
  add(app, "--epochs", o.epochs, "pretraining epochs");
  add(app, "--batch", o.batch, "images per step");
  add(app, "--lr", o.lr, "initial learning rate");
  add(app, "--encoder-dim", o.encoder_dim, "encoder width");
  add(app, "--decoder-dim", o.decoder_dim, "decoder width");
  add(app, "--encoder-layers", o.encoder_layers, "encoder blocks");
  add(app, "--decoder-layers", o.decoder_layers, "decoder blocks");
  add(app, "--heads", o.heads, "attention heads");
  add(app, "--mask-ratio", o.mask_ratio, "fraction of patches masked");
}

void add_embed(CLI::App* app, Overrides& o) {
  add(app, "--embed-mode", o.embed_mode, "patch | contextual | image");
}

void add_eval(CLI::App* app, Overrides& o) {
  add(app, "--labels", o.labels, "label JSONL (default <out>/labels.jsonl)");
  add(app, "--fusion", o.fusion, "concat | weighted-add | project-add");
  add(app, "--proj-dim", o.proj_dim, "project-add projection width");
  add(app, "--split", o.split, "random | geographic");
  add(app, "--region", o.region, "holdout polygon JSON for the geographic split");
  add(app, "--seeds", o.eval_seeds, "evaluation seeds");
  app->add_option("--external", o.external, "external embedding file (JSONL or S2VE); repeatable");
  auto* loc = app->add_flag("--location", o.location, "append the location encoding after fusion");
  auto* noloc = app->add_flag("--no-location", o.no_location, "disable the location encoding");
  auto* per = app->add_flag("--loc-per-source", o.loc_per_source, "append the location encoding to every source");
  loc->excludes(noloc);
  per->excludes(noloc);
  app->add_flag("--no-s2vec", o.no_s2vec, "leave the pipeline's own embeddings out of the probe");
}

void add_synth(CLI::App* app, Overrides& o) {
  add(app, "--latents", o.latents, "latent fields driving the counts (K)");
  add(app, "--images", o.images, "keep at most this many image cells (0 = all)");
  add(app, "--noise", o.noise, "target noise stddev");
  add(app, "--label-fraction", o.label_fraction, "fraction of cells that get a label");
  app->add_option("--box", o.box, "lat_min lat_max lng_min lng_max")->expected(4);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s2vec: S2 cell embeddings from built-environment features"};
  app.require_subcommand(1);
  Overrides o;

  auto* synth = app.add_subcommand("synth", "generate a synthetic region (features, labels, external embeddings)");
  auto* ingest = app.add_subcommand("ingest", "validate the feature file");
  auto* stats = app.add_subcommand("stats", "fit normalization statistics");
  auto* raster = app.add_subcommand("rasterize", "build the image dataset");
  auto* pretrain = app.add_subcommand("pretrain", "train the masked autoencoder");
  auto* embed = app.add_subcommand("embed", "extract the embedding table");
  auto* eval = app.add_subcommand("eval", "probe the embeddings on labeled cells");
  auto* run = app.add_subcommand("run", "ingest through eval in one go");

  for (auto* s : {synth, ingest, stats, raster, pretrain, embed, eval, run}) add_common(s, o);
  for (auto* s : {synth, ingest, stats, raster, embed, run}) add_inputs(s, o);
  for (auto* s : {synth, raster, embed, run}) add_raster(s, o);
  for (auto* s : {pretrain, embed, run}) add_mae(s, o);
  for (auto* s : {embed, run}) add_embed(s, o);
  for (auto* s : {eval, run}) add_eval(s, o);
  add_synth(synth, o);
  add(synth, "--labels", o.labels, "label JSONL to write (default <out>/labels.jsonl)");
  add(eval, "--patch-level", o.patch_level, "patch cell level (l)");
  add(pretrain, "--image-level", o.image_level, "image cell level (l')");
  add(pretrain, "--patch-level", o.patch_level, "patch cell level (l)");
  add(pretrain, "--feature-dim", o.feature_dim, "features per cell (F)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    PipelineConfig cfg = o.build();
    cfg.validate();
    s2vec::pipeline::StageContext ctx(cfg);
    ctx.force = o.force;
    if (synth->parsed()) s2vec::pipeline::run_synth(ctx);
    else if (ingest->parsed()) s2vec::pipeline::run_ingest(ctx);
    else if (stats->parsed()) s2vec::pipeline::run_stats(ctx);
    else if (raster->parsed()) s2vec::pipeline::run_rasterize(ctx);
    else if (pretrain->parsed()) s2vec::pipeline::run_pretrain(ctx);
    else if (embed->parsed()) s2vec::pipeline::run_embed(ctx);
    else if (eval->parsed()) s2vec::pipeline::run_eval(ctx);
    else if (run->parsed()) s2vec::pipeline::run_pipeline(ctx);
  } catch (const s2vec::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
