// Copyright 2026 The vibre Authors.
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
#include <numeric>
#include <vector>

#include "vibre/analysis.hpp"
#include "vibre/evaluation.hpp"
#include "vibre/model.hpp"
#include "vibre/rng.hpp"

namespace vibre {
namespace {

PredictionRecord rec(std::string gold, std::string predicted, double variance) {
  PredictionRecord r;
  r.gold = std::move(gold);
  r.predicted = std::move(predicted);
  r.variance = variance;
  return r;
}

std::vector<PredictionRecord> random_records(Rng& rng, std::size_t n, double max_var = 1.0) {
  const auto& labels = relation_labels();
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string g = rng.pick(labels);
    const std::string p = rng.bernoulli(0.6) ? g : rng.pick(labels);
    out.push_back(rec(g, p, max_var * rng.uniform()));
  }
  return out;
}

TEST(MeanEntityVarianceTest, DocumentedExamples) {
  EXPECT_EQ(mean_entity_variance(Tensor::full({3, 2}, 1.0), EntityMask({1, 0, 1})), 1.0);
  EXPECT_EQ(mean_entity_variance(Tensor({3, 1}, {1, 2, 9}), EntityMask({1, 1, 0})), 2.5);
}

TEST(MeanEntityVarianceTest, MatchesFilterAverageOracleAndIgnoresOtherRows) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor sigma = Tensor::zeros({5, 3});
    for (auto& v : sigma.mutable_data()) v = 0.1 + rng.uniform();
    std::vector<std::uint8_t> bits{1, 0, 0, 0, 0};
    for (std::size_t i = 1; i < 5; ++i) bits[i] = rng.bernoulli(0.5);
    const EntityMask mask(bits);
    std::vector<double> picked;
    for (std::size_t r = 0; r < 5; ++r)
      if (bits[r])
        for (std::size_t c = 0; c < 3; ++c) picked.push_back(sigma.at(r, c) * sigma.at(r, c));
    const double oracle = std::accumulate(picked.begin(), picked.end(), 0.0) / static_cast<double>(picked.size());
    const double v = mean_entity_variance(sigma, mask);
    EXPECT_NEAR(v, oracle, 1e-12);
    for (std::size_t r = 0; r < 5; ++r)
      if (!bits[r])
        for (std::size_t c = 0; c < 3; ++c) sigma.mutable_data()[r * 3 + c] = 50.0 * rng.uniform() + 1.0;
    EXPECT_EQ(mean_entity_variance(sigma, mask), v);
  }
}

TEST(MeanEntityVarianceTest, EmptyMaskIsAnError) {
  EXPECT_THROW(mean_entity_variance(Tensor::full({2, 2}, 1.0), EntityMask({0, 0})), VarianceError);
  EXPECT_THROW(mean_entity_variance(Tensor::full({2, 2}, 1.0), EntityMask({1})), DimensionError);
}

TEST(VarianceBinsTest, MembershipMatchesFloorOracle) {
  Rng rng(3);
  const auto records = random_records(rng, 400, 0.7);
  const auto bins = variance_bins(records);
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& b : bins) {
    std::size_t expect = 0;
    for (const auto& r : records) expect += static_cast<std::size_t>(std::floor(r.variance * 10)) == b.index;
    EXPECT_EQ(b.count, expect);
    EXPECT_NEAR(b.lower, b.index * 0.1, 1e-12);
    EXPECT_NEAR(b.upper - b.lower, 0.1, 1e-12);
    EXPECT_LE(b.top.size(), 3u);
    for (const auto& br : b.relations) EXPECT_LE(br.correct, br.gold);
    for (std::size_t i = 1; i < b.top.size(); ++i) EXPECT_GE(b.top[i - 1].correct, b.top[i].correct);
    total += b.proportion;
    counted += b.count;
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_EQ(counted, records.size());
}

TEST(VarianceBinsTest, IdenticalVariancesGiveOneBin) {
  const std::string r = relation_labels()[1];
  const std::vector<PredictionRecord> records{rec(r, r, 0.15), rec(r, "no_relation", 0.15)};
  const auto bins = variance_bins(records);
  ASSERT_EQ(bins.size(), 1u);
  EXPECT_EQ(bins[0].proportion, 1.0);
  EXPECT_EQ(bins[0].index, 1u);
  ASSERT_EQ(bins[0].top.size(), 1u);
  EXPECT_EQ(bins[0].top[0].correct, 1u);
  EXPECT_EQ(bins[0].top[0].gold, 2u);
}

TEST(VarianceCurveTest, FullSetAndHalfSetMatchRecomputation) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto records = random_records(rng, 20 + rng.index(100));
    const std::vector<double> ps{50.0, 100.0};
    const auto curve = variance_sorted_f1(records, ps);
    EXPECT_EQ(curve[1].micro_f1, micro_f1(records));
    EXPECT_EQ(curve[1].count, records.size());
    auto sorted = records;
    std::sort(sorted.begin(), sorted.end(),
              [](const PredictionRecord& a, const PredictionRecord& b) { return a.variance > b.variance; });
    const std::size_t half = (sorted.size() + 1) / 2;
    sorted.resize(half);
    EXPECT_EQ(curve[0].count, half);
    EXPECT_EQ(curve[0].micro_f1, micro_f1(sorted));
  }
}

TEST(VarianceCurveTest, EqualVariancesGiveFlatCurve) {
  Rng rng(7);
  auto records = random_records(rng, 60);
  for (auto& r : records) r.variance = 0.3;
  const auto curve = variance_sorted_f1(records, default_percentages());
  ASSERT_EQ(curve.size(), 10u);
  for (const auto& p : curve) EXPECT_EQ(p.micro_f1, micro_f1(records));
}

TEST(VarianceCurveTest, RejectsBadPercentages) {
  const std::vector<PredictionRecord> records{rec("no_relation", "no_relation", 0.1)};
  EXPECT_THROW(variance_sorted_f1(records, std::vector<double>{0.0}), std::invalid_argument);
  EXPECT_THROW(variance_sorted_f1(records, std::vector<double>{120.0}), std::invalid_argument);
}

class OcclusionTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Example a{"a", {"Acme", "Corp", "hired", "Jo", "Bell", "last", "year"}, {3, 4}, {0, 1},
              EntityType::kPerson, EntityType::kOrg, relation_labels()[1]};
    Example b{"b", {"Jo", "Bell", "works", "for", "Acme", "Corp"}, {0, 1}, {4, 5},
              EntityType::kPerson, EntityType::kOrg, relation_labels()[1]};
    examples_ = {a, b};
    vocab_ = Vocabulary::build(examples_);
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.ffn_width = 16;
    cfg.max_sequence_length = 16;
    cfg.use_vib = true;
    model_ = ModelState::init(cfg, vocab_.size());
  }
  std::vector<Example> examples_;
  Vocabulary vocab_;
  ModelState model_;
};

TEST_F(OcclusionTest, PaddingPositionIsInert) {
  std::vector<MarkedExample> marked;
  for (const auto& e : examples_) marked.push_back(mark_entities(e, vocab_, 16));
  const Batch batch = make_batch(marked);
  ASSERT_LT(marked[1].ids.size(), batch.seq_len);
  const std::size_t pad_row = batch.seq_len + batch.seq_len - 1;
  ASSERT_EQ(batch.valid[pad_row], 0);
  EXPECT_NEAR(occlusion_delta(model_, batch, 1, pad_row), 0.0, 1e-9);
}

TEST_F(OcclusionTest, ScoresMatchBruteForceReinference) {
  const AttributionResult res = occlusion_attribution(model_, vocab_, examples_[0], Method::kVib);
  const MarkedExample m = mark_entities(examples_[0], vocab_, 16);
  ASSERT_EQ(res.scores.size(), m.tokens.size());
  ASSERT_EQ(res.tokens, m.tokens);
  NoGradGuard no_grad;
  const Batch batch = make_batch(std::span<const MarkedExample>(&m, 1));
  const std::size_t gold = m.label;
  const double full = forward(model_, batch).logits.value(gold);
  for (std::size_t t = 0; t < m.tokens.size(); ++t) {
    const bool marker = m.ids[t] == Vocabulary::kSubjMarker || m.ids[t] == Vocabulary::kObjMarker;
    if (marker) {
      EXPECT_EQ(res.scores[t], 0.0);
      continue;
    }
    EncodeOptions opts;
    opts.occluded_rows = {t};
    const double occluded = forward(model_, batch, opts).logits.value(gold);
    EXPECT_EQ(res.scores[t], full - occluded);
    EXPECT_TRUE(std::isfinite(res.scores[t]));
  }
  EXPECT_GT(res.variance, 0.0);
}

}  // namespace
}  // namespace vibre
