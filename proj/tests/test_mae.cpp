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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "s2vec/mae/config.hpp"
#include "s2vec/mae/embedding.hpp"
#include "s2vec/mae/model.hpp"
#include "s2vec/mae/train.hpp"
#include "s2vec/numerics/grad_check.hpp"
#include "test_util.hpp"

using namespace s2vec;
using namespace s2vec::mae;

namespace {

using Mat = std::vector<std::vector<double>>;

MaeConfig tiny_config() {
  MaeConfig c;
  c.feature_dim = 3;
  c.grid = 2;
  c.encoder_dim = 8;
  c.decoder_dim = 4;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.mask_ratio = 0.5;
  c.dropout = 0.0;
  return c;
}

// Every tensor drawn from N(0, s) so no block degenerates to identity.
ParamSet<double> random_params(const MaeConfig& cfg, std::uint64_t seed, double s = 0.5) {
  auto p = init_params<double>(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x5eed);
  std::normal_distribution<double> n(0.0, s);
  for (auto& t : p.values())
    for (auto& v : t.values()) v = n(rng);
  return p;
}

Tensor<double> random_image(const MaeConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<double> t = Tensor<double>::matrix(cfg.patches(), cfg.feature_dim);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// Straight-line reference evaluation on nested vectors.

Mat to_mat(const Tensor<double>& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

Mat lin(const Mat& x, const Tensor<double>& w, const Tensor<double>& b) {
  Mat y(x.size(), std::vector<double>(w.dim(1)));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t j = 0; j < w.dim(1); ++j) {
      double acc = b[j];
      for (std::size_t i = 0; i < w.dim(0); ++i) acc += x[r][i] * w.at(i, j);
      y[r][j] = acc;
    }
  return y;
}

Mat ln(const Mat& x, const Tensor<double>& g, const Tensor<double>& b) {
  Mat y = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    double mu = 0, var = 0;
    for (double v : x[r]) mu += v;
    mu /= x[r].size();
    for (double v : x[r]) var += (v - mu) * (v - mu);
    var /= x[r].size();
    for (std::size_t j = 0; j < x[r].size(); ++j) y[r][j] = g[j] * (x[r][j] - mu) / std::sqrt(var + 1e-6) + b[j];
  }
  return y;
}

Mat plus(const Mat& a, const Mat& b) {
  Mat y = a;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t j = 0; j < a[r].size(); ++j) y[r][j] += b[r][j];
  return y;
}

Mat mha(const Mat& x, const ParamSet<double>& p, const std::string& pre, std::size_t heads) {
  const Mat q = lin(x, p[pre + ".attn.q.w"], p[pre + ".attn.q.b"]);
  const Mat k = lin(x, p[pre + ".attn.k.w"], p[pre + ".attn.k.b"]);
  const Mat v = lin(x, p[pre + ".attn.v.w"], p[pre + ".attn.v.b"]);
  const std::size_t s = x.size(), d = q[0].size(), dh = d / heads;
  Mat ctx(s, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<double> w(s);
      double mx = -1e300, z = 0;
      for (std::size_t j = 0; j < s; ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
        w[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, w[j]);
      }
      for (auto& e : w) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < s; ++j)
        for (std::size_t c = 0; c < dh; ++c) ctx[i][h * dh + c] += w[j] / z * v[j][h * dh + c];
    }
  }
  return lin(ctx, p[pre + ".attn.out.w"], p[pre + ".attn.out.b"]);
}

Mat block(const Mat& x, const ParamSet<double>& p, const std::string& pre, std::size_t heads) {
  Mat y = plus(x, mha(ln(x, p[pre + ".ln1.gamma"], p[pre + ".ln1.beta"]), p, pre, heads));
  Mat h = lin(ln(y, p[pre + ".ln2.gamma"], p[pre + ".ln2.beta"]), p[pre + ".mlp.fc1.w"], p[pre + ".mlp.fc1.b"]);
  for (auto& row : h)
    for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return plus(y, lin(h, p[pre + ".mlp.fc2.w"], p[pre + ".mlp.fc2.b"]));
}

Mat oracle_encode(const Mat& img, const MaskPlan& plan, const ParamSet<double>& p, const MaeConfig& cfg) {
  Mat x;
  for (auto i : plan.visible) x.push_back(img[i]);
  x = lin(x, p["patch.w"], p["patch.b"]);
  const auto& pos = p["enc.pos"];
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t j = 0; j < x[r].size(); ++j) x[r][j] += pos.at(plan.visible[r], j);
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) x = block(x, p, enc_block_name(l), cfg.heads);
  if (cfg.final_norm) x = ln(x, p["enc.norm.gamma"], p["enc.norm.beta"]);
  return x;
}

Mat oracle_decode(const Mat& lat, const MaskPlan& plan, const ParamSet<double>& p, const MaeConfig& cfg) {
  const Mat d = lin(lat, p["dec.embed.w"], p["dec.embed.b"]);
  const auto& tok = p["dec.mask_token"];
  Mat full(cfg.patches(), std::vector<double>(tok.values().begin(), tok.values().end()));
  for (std::size_t k = 0; k < plan.visible.size(); ++k) full[plan.visible[k]] = d[k];
  const auto& pos = p["dec.pos"];
  for (std::size_t r = 0; r < full.size(); ++r)
    for (std::size_t j = 0; j < full[r].size(); ++j) full[r][j] += pos.at(r, j);
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) full = block(full, p, dec_block_name(l), cfg.heads);
  if (cfg.final_norm) full = ln(full, p["dec.norm.gamma"], p["dec.norm.beta"]);
  return lin(full, p["head.w"], p["head.b"]);
}

void expect_mat_near(const Tensor<double>& got, const Mat& want, double tol) {
  ASSERT_EQ(got.rows(), want.size());
  for (std::size_t r = 0; r < want.size(); ++r) {
    ASSERT_EQ(got.cols(), want[r].size());
    for (std::size_t c = 0; c < want[r].size(); ++c) EXPECT_NEAR(got.at(r, c), want[r][c], tol) << r << "," << c;
  }
}

RasterDataset random_dataset(const MaeConfig& cfg, std::size_t images, std::uint64_t seed) {
  RasterDataset ds;
  ds.image_level = 8;
  ds.patch_level = 8 + static_cast<int>(std::log2(cfg.grid));
  ds.feature_dim = cfg.feature_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  const auto parents = CellId::from_face(2).descendants(8);
  for (std::size_t i = 0; i < images; ++i) {
    RasterImage img;
    img.parent = parents[i * 7];
    img.grid = cfg.grid;
    img.feature_dim = cfg.feature_dim;
    img.pixels.resize(img.patches() * img.feature_dim);
    for (auto& v : img.pixels) v = n(rng);
    img.presence.assign(img.patches(), 1);
    img.presence[0] = 0;
    ds.images.push_back(std::move(img));
  }
  return ds;
}

}  // namespace

TEST(Mae, InitDeterministicAndSeeded) {
  const auto cfg = tiny_config();
  EXPECT_EQ(init_params<float>(cfg, 7), init_params<float>(cfg, 7));
  EXPECT_FALSE(init_params<float>(cfg, 7) == init_params<float>(cfg, 8));
  const auto p = init_params<double>(cfg, 3);
  for (double v : p["patch.w"].values()) EXPECT_LE(std::abs(v), 0.04);
  for (double v : p["patch.b"].values()) EXPECT_EQ(v, 0.0);
  for (double v : p["dec.mask_token"].values()) EXPECT_EQ(v, 0.0);
  for (double v : p["enc.block0.ln1.gamma"].values()) EXPECT_EQ(v, 1.0);
}

TEST(Mae, ParameterCountFromShapes) {
  MaeConfig cfg;  // F = 116, G = 16, 256/128, 6 + 2 layers
  const double f = 116, n = 256, e = 256, d = 128;
  auto block = [](double k) {
    return 2 * k + 4 * (k * k + k) + 2 * k + (k * 4 * k + 4 * k) + (4 * k * k + k);
  };
  const double want =
      (f * e + e) + n * e + 6 * block(e) + 2 * e + (e * d + d) + d + n * d + 2 * block(d) + 2 * d + (d * f + f);
  EXPECT_EQ(static_cast<double>(init_params<float>(cfg, 0).element_count()), want);
  EXPECT_EQ(init_params<float>(cfg, 0).element_count(), 5'312'116u);
  cfg.final_norm = false;
  EXPECT_EQ(init_params<float>(cfg, 0).element_count(), 5'311'348u);
}

TEST(Mae, ConfigValidationAndJson) {
  MaeConfig c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.mask_ratio = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.exclude_absent = true;
  EXPECT_EQ(mae_config_from_json(to_json(c)), c);
  EXPECT_THROW(mae_config_from_json(nlohmann::json{{"encoder_dimm", 8}}), ValidationError);
  EXPECT_THROW(mae_config_from_json(nlohmann::json{{"grid", "x"}}), ValidationError);
}

TEST(Mae, RandomMask) {
  std::mt19937_64 rng(1);
  const auto plan = random_mask(256, 0.75, rng);
  EXPECT_EQ(plan.visible.size(), 64u);
  EXPECT_EQ(plan.masked.size(), 192u);
  plan.validate(256);
  EXPECT_TRUE(std::is_sorted(plan.visible.begin(), plan.visible.end()));

  std::mt19937_64 a(99), b(99);
  const auto pa = random_mask(256, 0.75, a);
  const auto pb = random_mask(256, 0.75, b);
  EXPECT_EQ(pa.masked, pb.masked);

  std::mt19937_64 mc(2024);
  std::vector<int> hits(256, 0);
  const int draws = 10000;
  for (int t = 0; t < draws; ++t)
    for (auto i : random_mask(256, 0.75, mc).masked) ++hits[i];
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 0.75, 0.02);

  EXPECT_THROW(random_mask(4, 0.05, rng), ValidationError);
  EXPECT_THROW(random_mask(4, 0.95, rng), ValidationError);
  EXPECT_THROW(random_mask(4, 0.0, rng), ValidationError);
}

TEST(Mae, IdentityBlocksGiveProjectionPlusPosition) {
  auto cfg = tiny_config();
  cfg.final_norm = false;
  auto p = random_params(cfg, 5);
  for (const char* n : {"enc.block0.attn.out.w", "enc.block0.attn.out.b", "enc.block0.mlp.fc2.w",
                        "enc.block0.mlp.fc2.b"})
    p[n].fill(0.0);
  std::mt19937_64 rng(3);
  const auto img = random_image(cfg, rng);
  const auto plan = all_visible(cfg.patches());
  const auto lat = encode_visible(img, plan, p, cfg);
  Mat want = lin(to_mat(img), p["patch.w"], p["patch.b"]);
  for (std::size_t r = 0; r < want.size(); ++r)
    for (std::size_t j = 0; j < want[r].size(); ++j) want[r][j] += p["enc.pos"].at(r, j);
  expect_mat_near(lat, want, 1e-12);
}

TEST(Mae, ForwardMatchesStraightLineOracle) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto cfg = tiny_config();
    cfg.grid = 3;
    cfg.mask_ratio = 0.6;
    const auto p = random_params(cfg, seed);
    std::mt19937_64 rng(seed);
    const auto img = random_image(cfg, rng);
    const auto plan = random_mask(cfg.patches(), cfg.mask_ratio, rng);
    const auto lat = encode_visible(img, plan, p, cfg);
    const Mat want_lat = oracle_encode(to_mat(img), plan, p, cfg);
    expect_mat_near(lat, want_lat, 1e-11);
    const auto rec = decode_reconstruct(lat, plan, p, cfg);
    expect_mat_near(rec, oracle_decode(want_lat, plan, p, cfg), 1e-11);
  }
}

TEST(Mae, MaskingInvariance) {
  const auto cfg = tiny_config();
  const auto p = random_params(cfg, 11);
  std::mt19937_64 rng(4);
  auto img = random_image(cfg, rng);
  const auto plan = random_mask(cfg.patches(), cfg.mask_ratio, rng);
  const auto lat = encode_visible(img, plan, p, cfg);
  const auto rec = decode_reconstruct(lat, plan, p, cfg);
  for (auto s : plan.masked)
    for (auto& v : img.row(s)) v = v * -3.0 + 10.0;
  const auto lat2 = encode_visible(img, plan, p, cfg);
  EXPECT_EQ(lat, lat2);
  EXPECT_EQ(rec, decode_reconstruct(lat2, plan, p, cfg));
}

TEST(Mae, ZeroHeadGivesBias) {
  auto cfg = tiny_config();
  auto p = random_params(cfg, 12);
  p["head.w"].fill(0.0);
  std::mt19937_64 rng(5);
  const auto img = random_image(cfg, rng);
  const auto plan = random_mask(cfg.patches(), cfg.mask_ratio, rng);
  const auto rec = decode_reconstruct(encode_visible(img, plan, p, cfg), plan, p, cfg);
  ASSERT_EQ(rec.rows(), cfg.patches());
  ASSERT_EQ(rec.cols(), cfg.feature_dim);
  for (std::size_t r = 0; r < rec.rows(); ++r)
    for (std::size_t c = 0; c < rec.cols(); ++c) EXPECT_EQ(rec.at(r, c), p["head.b"][c]);
}

TEST(Mae, MaskedLoss) {
  const auto cfg = tiny_config();
  std::mt19937_64 rng(6);
  const auto target = random_image(cfg, rng);
  const auto plan = random_mask(cfg.patches(), cfg.mask_ratio, rng);
  EXPECT_EQ(masked_mse_loss(target, target, plan), 0.0);
  auto shifted = target;
  for (auto& v : shifted.values()) v += 1.0;
  EXPECT_NEAR(masked_mse_loss(shifted, target, plan), 1.0, 1e-15);

  const auto recon = random_image(cfg, rng);
  double brute = 0;
  for (auto s : plan.masked)
    for (std::size_t f = 0; f < cfg.feature_dim; ++f) brute += std::pow(recon.at(s, f) - target.at(s, f), 2);
  EXPECT_NEAR(masked_mse_loss(recon, target, plan), brute / (plan.masked.size() * cfg.feature_dim), 1e-14);

  // Visible slots never enter the loss.
  auto wild = recon;
  for (auto s : plan.visible)
    for (auto& v : wild.row(s)) v = 1e6;
  EXPECT_EQ(masked_mse_loss(wild, target, plan), masked_mse_loss(recon, target, plan));

  const std::vector<std::uint8_t> absent(cfg.patches(), 0);
  EXPECT_TRUE(loss_slots(plan, absent, true).empty());
  EXPECT_EQ(loss_slots(plan, absent, false), plan.masked);
  Tape<double> tape;
  EXPECT_THROW(mae::masked_mse_loss(tape, tape.constant(recon), target, {}), ValidationError);
}

TEST(Mae, MaskTokenReceivesGradient) {
  const auto cfg = tiny_config();
  const auto p = init_params<double>(cfg, 21);
  std::mt19937_64 rng(8);
  const auto img = random_image(cfg, rng);
  const auto plan = random_mask(cfg.patches(), cfg.mask_ratio, rng);
  auto grads = p.zero_grads();
  Tape<double> tape;
  const auto m = bind_mae(tape, p, cfg, &grads);
  const auto rec = decode_reconstruct(tape, m, cfg, encode_visible(tape, m, cfg, tape.constant(img), plan), plan);
  tape.backward(mae::masked_mse_loss(tape, rec, img, plan.masked));
  EXPECT_GT(squared_norm(grads[p.index("dec.mask_token")]), 0.0);
  EXPECT_GT(squared_norm(grads[p.index("patch.w")]), 0.0);
}

TEST(Mae, EndToEndGradCheck) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto cfg = tiny_config();
    const auto p = random_params(cfg, 100 + seed, 0.3);
    std::mt19937_64 rng(seed);
    const auto img = random_image(cfg, rng);
    const auto plan = random_mask(cfg.patches(), cfg.mask_ratio, rng);
    const auto names = p.names();
    auto f = [&](auto& t, const auto& v) {
      using E = typename std::remove_cvref_t<decltype(t.value(v[0]))>::value_type;
      const auto m = make_mae_vars<E>(cfg, [&](const std::string& n) {
        return v[static_cast<std::size_t>(std::find(names.begin(), names.end(), n) - names.begin())];
      });
      const auto target = img.template cast<E>();
      const auto rec = decode_reconstruct(t, m, cfg, encode_visible(t, m, cfg, t.constant(target), plan), plan);
      return mae::masked_mse_loss(t, rec, target, plan.masked);
    };
    const auto r = grad_check_extended(f, p.values());
    EXPECT_LT(r.max_rel_error, 1e-5) << "seed " << seed << ": " << names[r.worst_param] << "[" << r.worst_index
                                     << "] autodiff " << r.autodiff << " fd " << r.numeric;
  }
}

TEST(Mae, ShuffleBufferIsPermutation) {
  std::mt19937_64 rng(1);
  for (std::size_t buf : {1u, 3u, 10u, 1000u}) {
    auto order = shuffle_buffer_order(37, buf, rng);
    if (buf == 1) {
      for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
    }
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
  }
}

TEST(Mae, PretrainSmoke) {
  auto cfg = tiny_config();
  cfg.epochs = 1;
  cfg.batch = 4;
  cfg.dropout = 0.1;
  auto one = random_dataset(cfg, 1, 1);
  const auto r1 = pretrain<float>(one, cfg, 3);
  EXPECT_EQ(r1.loss_history.size(), 1u);

  cfg.epochs = 3;
  const auto ds = random_dataset(cfg, 10, 2);
  const auto a = pretrain<float>(ds, cfg, 9);
  const auto b = pretrain<float>(ds, cfg, 9);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.optimizer.step, 9);
  const auto c = pretrain<float>(ds, cfg, 10);
  EXPECT_NE(a.loss_history, c.loss_history);

  auto bad = cfg;
  bad.feature_dim = 4;
  EXPECT_THROW(pretrain<float>(ds, bad, 1), ValidationError);
  RasterDataset empty = ds;
  empty.images.clear();
  EXPECT_THROW(pretrain<float>(empty, cfg, 1), ValidationError);
}

TEST(Mae, PretrainMultiThreadDeterministic) {
  auto cfg = tiny_config();
  cfg.epochs = 2;
  cfg.batch = 5;
  const auto ds = random_dataset(cfg, 12, 3);
  PretrainOptions opts;
  opts.threads = 3;
  const auto a = pretrain<float>(ds, cfg, 4, opts);
  const auto b = pretrain<float>(ds, cfg, 4, opts);
  EXPECT_EQ(a.params, b.params);
}

TEST(Mae, PretrainExcludeAbsent) {
  auto cfg = tiny_config();
  cfg.epochs = 1;
  cfg.exclude_absent = true;
  auto ds = random_dataset(cfg, 4, 5);
  for (auto& img : ds.images) img.presence.assign(img.patches(), 0);
  EXPECT_THROW(pretrain<float>(ds, cfg, 1), RuntimeFailure);
  ds.images[0].presence.assign(ds.images[0].patches(), 1);
  EXPECT_EQ(pretrain<float>(ds, cfg, 1).loss_history.size(), 1u);
}

TEST(Mae, ExtractEmbeddings) {
  const auto cfg = tiny_config();
  const auto p = random_params(cfg, 31).cast<float>();
  NormStats stats(3);
  stats.add(std::vector<double>{0, 1, 2});
  stats.add(std::vector<double>{4, 1, 6});
  stats.add(std::vector<double>{2, 7, 1});
  const auto leaves = CellId::from_face(1).descendants(4);
  std::vector<CellFeatures> cells{{leaves[0].token(), {0, 0, 0}},
                                  {leaves[5].token(), {0, 0, 0}},
                                  {leaves[9].token(), {3, 2, 5}},
                                  {leaves[2].token(), {3, 2, 5}},
                                  {leaves[1].token(), {1, 8, 0}}};
  const auto t = extract_embeddings(std::span<const CellFeatures>(cells), stats, p);
  ASSERT_EQ(t.size(), 5u);
  EXPECT_EQ(t.dim(), 8u);
  EXPECT_TRUE(std::is_sorted(t.ids().begin(), t.ids().end()));
  auto same = [&](const CellFeatures& a, const CellFeatures& b) {
    const auto x = t.at(a.cell().raw()), y = t.at(b.cell().raw());
    return std::equal(x.begin(), x.end(), y.begin());
  };
  EXPECT_TRUE(same(cells[0], cells[1]));
  EXPECT_TRUE(same(cells[2], cells[3]));
  EXPECT_FALSE(same(cells[0], cells[4]));

  // Hand matvec.
  const auto x = apply_norm(cells[4], stats);
  const auto got = t.at(cells[4].cell().raw());
  for (std::size_t j = 0; j < 8; ++j) {
    double acc = p["patch.b"][j];
    for (std::size_t i = 0; i < 3; ++i) acc += x[i] * p["patch.w"].at(i, j);
    EXPECT_NEAR(got[j], acc, 1e-6);
  }

  auto shuffled = cells;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(extract_embeddings(std::span<const CellFeatures>(shuffled), stats, p, 2), t);

  NormStats wrong(4);
  wrong.add(std::vector<double>{1, 2, 3, 4});
  EXPECT_THROW(extract_embeddings(std::span<const CellFeatures>(cells), wrong, p), ValidationError);
}

TEST(Mae, EmbeddingTableFormat) {
  EmbeddingTable t(2);
  const auto a = CellId::from_face(3).children()[1], b = CellId::from_face(0);
  t.append(a.raw(), std::vector<float>{1.5f, -2.0f});
  t.append(b.raw(), std::vector<float>{0.25f, 4.0f});
  t.finalize();
  EXPECT_EQ(t.ids().front(), b.raw());
  std::stringstream ss;
  write_embedding_table(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 2 + 4 + 8 + 2 * (8 + 8));
  EXPECT_EQ(bytes.substr(0, 4), "S2VE");
  std::uint64_t first = 0;
  std::memcpy(&first, bytes.data() + 18, 8);
  EXPECT_EQ(first, b.raw());
  EXPECT_EQ(read_embedding_table(ss), t);

  EmbeddingTable dup(1);
  dup.append(a.raw(), std::vector<float>{1});
  dup.append(a.raw(), std::vector<float>{2});
  EXPECT_THROW(dup.finalize(), ValidationError);
  EXPECT_THROW(t.append(a.raw(), std::vector<float>{1}), ValidationError);
  std::stringstream bad("S2VX");
  EXPECT_THROW(read_embedding_table(bad), ValidationError);
}

TEST(Mae, ContextualAndPooledEmbeddings) {
  const auto cfg = tiny_config();
  const auto ds = random_dataset(cfg, 3, 7);
  const auto p = random_params(cfg, 41).cast<float>();
  const auto ctx = extract_contextual_embeddings(ds, p, cfg);
  EXPECT_EQ(ctx.size(), 3u * 3);  // slot 0 absent in each image
  for (const auto& img : ds.images) {
    const auto cells = slot_cells(img.parent, ds.patch_level);
    EXPECT_FALSE(ctx.contains(cells[0].raw()));
    for (std::size_t s = 1; s < cells.size(); ++s) EXPECT_TRUE(ctx.contains(cells[s].raw()));
  }
  const auto pooled = extract_contextual_embeddings(ds, p, cfg, true);
  EXPECT_EQ(pooled.size(), 3u);
  EXPECT_TRUE(pooled.contains(ds.images[1].parent.raw()));
}
