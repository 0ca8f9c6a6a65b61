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

#include "s2vec/ingest.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

namespace s2vec {
namespace {

std::vector<CellFeatures> random_records(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lat(-60, 60), lng(-180, 179);
  std::gamma_distribution<double> gamma(2.0, 3.0);
  std::vector<CellFeatures> out(n);
  for (auto& r : out) {
    r.token = cell_from_latlng({lat(rng), lng(rng)}, 12).token();
    r.counts.resize(dim);
    for (std::size_t f = 0; f < dim; ++f) r.counts[f] = std::round(gamma(rng) * (1.0 + static_cast<double>(f)));
  }
  return out;
}

// Independent two-pass population moments.
void two_pass(const std::vector<CellFeatures>& recs, std::vector<double>& mean, std::vector<double>& var) {
  const std::size_t dim = recs.front().counts.size();
  mean.assign(dim, 0.0);
  var.assign(dim, 0.0);
  for (const auto& r : recs)
    for (std::size_t f = 0; f < dim; ++f) mean[f] += r.counts[f];
  for (auto& m : mean) m /= static_cast<double>(recs.size());
  for (const auto& r : recs)
    for (std::size_t f = 0; f < dim; ++f) var[f] += (r.counts[f] - mean[f]) * (r.counts[f] - mean[f]);
  for (auto& v : var) v /= static_cast<double>(recs.size());
}

double rel_err(double a, double b) { return std::fabs(a - b) / std::max(1e-300, std::max(std::fabs(a), std::fabs(b))); }

TEST(Ingest, LoadEmptyAndValid) {
  testing::TempDir dir("ingest");
  testing::write_text(dir.file("empty.jsonl"), "");
  EXPECT_TRUE(load_features(dir.file("empty.jsonl")).empty());

  const auto a = cell_from_latlng({1, 2}, 12).token();
  const auto b = cell_from_latlng({3, 4}, 12).token();
  testing::write_text(dir.file("two.jsonl"), "{\"token\":\"" + a + "\",\"counts\":[1,2]}\n{\"token\":\"" + b +
                                                 "\",\"counts\":[0,5]}\n");
  const auto recs = load_features(dir.file("two.jsonl"));
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].token, a);
  EXPECT_EQ(recs[1].token, b);
  EXPECT_EQ(recs[1].counts, (std::vector<double>{0, 5}));
}

TEST(Ingest, LoadErrorsNameTheLine) {
  testing::TempDir dir("ingest");
  const auto a = cell_from_latlng({1, 2}, 12).token();
  const auto b = cell_from_latlng({3, 4}, 12).token();
  const auto c8 = cell_from_latlng({5, 6}, 8).token();
  auto expect_error = [&](const std::string& text, const std::string& fragment, std::size_t dim = 0) {
    testing::write_text(dir.file("f.jsonl"), text);
    try {
      load_features(dir.file("f.jsonl"), dim);
      FAIL() << "expected error containing " << fragment;
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  std::string counts115 = "[";
  for (int f = 0; f < 115; ++f) counts115 += (f ? ",1" : "1");
  counts115 += "]";
  expect_error("{\"token\":\"" + a + "\",\"counts\":" + counts115 + "}\n", "line 1: ragged counts", 116);
  expect_error("{\"token\":\"" + a + "\",\"counts\":[1]}\n{\"token\":\"" + b + "\",\"counts\":[1,2]}\n",
               "line 2: ragged");
  expect_error("{\"token\":\"" + a + "\",\"counts\":[1]}\nnot json\n", "line 2: malformed");
  expect_error("{\"token\":\"" + a + "\",\"counts\":[1]}\n{\"token\":\"" + c8 + "\",\"counts\":[1]}\n", "mixed levels");
  expect_error("{\"token\":\"" + a + "\",\"counts\":[1]}\n{\"token\":\"" + a + "\",\"counts\":[1]}\n", "duplicate");
  expect_error("{\"token\":\"zz\",\"counts\":[1]}\n", "line 1");
  expect_error("{\"token\":\"" + a + "\",\"counts\":[-1]}\n", ">= 0");
  EXPECT_THROW(load_features(dir.file("missing.jsonl")), ValidationError);
}

TEST(Ingest, FitExamples) {
  std::vector<CellFeatures> one{{"1", {3.0, 7.0}}};
  auto s = fit_norm_stats(one);
  EXPECT_EQ(s.mean(), (std::vector<double>{3, 7}));
  EXPECT_EQ(s.variance(), (std::vector<double>{0, 0}));

  std::vector<CellFeatures> two{{"1", {0, 0, 0}}, {"3", {2, 2, 2}}};
  s = fit_norm_stats(two);
  for (std::size_t f = 0; f < 3; ++f) {
    EXPECT_DOUBLE_EQ(s.mean()[f], 1.0);
    EXPECT_DOUBLE_EQ(s.variance()[f], 1.0);
  }
  EXPECT_THROW(fit_norm_stats(std::span<const CellFeatures>{}), ValidationError);
}

TEST(Ingest, StreamingMatchesTwoPassAndMergeIsAssociative) {
  const auto recs = random_records(10000, 12, 3);
  std::vector<double> mean, var;
  two_pass(recs, mean, var);
  const auto stats = fit_norm_stats(recs);
  for (std::size_t f = 0; f < mean.size(); ++f) {
    EXPECT_LT(rel_err(stats.mean()[f], mean[f]), 1e-9);
    EXPECT_LT(rel_err(stats.variance()[f], var[f]), 1e-9);
  }
  // Uneven shards merged in two different groupings.
  std::vector<NormStats> shards(5);
  const std::size_t cuts[] = {0, 17, 3000, 3001, 7000, 10000};
  for (int k = 0; k < 5; ++k)
    for (std::size_t i = cuts[k]; i < cuts[k + 1]; ++i) shards[k].add(recs[i].counts);
  NormStats left = shards[0];
  for (int k = 1; k < 5; ++k) left.merge(shards[k]);
  NormStats right = shards[4];
  NormStats mid = shards[2];
  mid.merge(shards[3]);
  NormStats head = shards[0];
  head.merge(shards[1]);
  head.merge(mid);
  head.merge(right);
  for (std::size_t f = 0; f < mean.size(); ++f) {
    EXPECT_LT(rel_err(left.mean()[f], mean[f]), 1e-9);
    EXPECT_LT(rel_err(left.variance()[f], var[f]), 1e-9);
    EXPECT_LT(rel_err(head.variance()[f], left.variance()[f]), 1e-9);
  }
  EXPECT_EQ(left.count(), 10000u);
}

TEST(Ingest, ApplyNormProperties) {
  const auto recs = random_records(10000, 8, 9);
  const auto stats = fit_norm_stats(recs);
  const auto at_mean = apply_norm(std::span<const double>(stats.mean()), stats);
  for (double v : at_mean) EXPECT_EQ(v, 0.0);

  NormStats sums(8);
  for (const auto& r : recs) {
    const auto z = apply_norm(r, stats);
    sums.add(z);
    const auto back = invert_norm(z, stats);
    for (std::size_t f = 0; f < back.size(); ++f) EXPECT_LE(std::fabs(back[f] - r.counts[f]), 1e-6 * std::max(1.0, r.counts[f]));
  }
  for (std::size_t f = 0; f < 8; ++f) {
    EXPECT_LT(std::fabs(sums.mean()[f]), 1e-6);
    EXPECT_NEAR(sums.variance()[f], 1.0, 1e-4);
  }
  std::vector<double> wrong(7, 0.0);
  EXPECT_THROW(apply_norm(std::span<const double>(wrong), stats), ValidationError);
}

TEST(Ingest, ZeroVarianceUsesFloor) {
  std::vector<CellFeatures> recs{{"1", {4, 1}}, {"3", {4, 3}}};
  const auto stats = fit_norm_stats(recs);
  const std::vector<double> x{5, 2};
  const auto z = apply_norm(std::span<const double>(x), stats);
  EXPECT_DOUBLE_EQ(z[0], 1.0 / std::sqrt(1e-6));
  EXPECT_TRUE(std::isfinite(z[0]));
  EXPECT_DOUBLE_EQ(z[1], 0.0);
}

TEST(Ingest, NormStatsJsonRoundTrip) {
  testing::TempDir dir("ingest");
  const auto stats = fit_norm_stats(random_records(50, 4, 1));
  save_norm_stats(dir.file("s.json"), stats);
  const auto back = load_norm_stats(dir.file("s.json"));
  EXPECT_EQ(back.mean(), stats.mean());
  EXPECT_EQ(back.count(), stats.count());
  for (std::size_t f = 0; f < 4; ++f) EXPECT_NEAR(back.variance()[f], stats.variance()[f], 1e-12 * stats.variance()[f]);
}

}  // namespace
}  // namespace s2vec
