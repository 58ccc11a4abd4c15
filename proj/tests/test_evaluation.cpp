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
#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vibre/corpus.hpp"
#include "vibre/evaluation.hpp"
#include "vibre/rng.hpp"

namespace vibre {
namespace {

PredictionRecord rec(std::string gold, std::string predicted, std::string id = "x") {
  PredictionRecord r;
  r.example_id = std::move(id);
  r.gold = std::move(gold);
  r.predicted = std::move(predicted);
  return r;
}

std::vector<PredictionRecord> random_records(Rng& rng, std::size_t n) {
  const auto& labels = relation_labels();
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    // Skew toward the negative class so both edge regimes occur.
    const std::string g = rng.bernoulli(0.3) ? std::string(kNoRelation) : rng.pick(labels);
    const std::string p = rng.bernoulli(0.5) ? g : (rng.bernoulli(0.3) ? std::string(kNoRelation) : rng.pick(labels));
    out.push_back(rec(g, p, "r" + std::to_string(i)));
  }
  return out;
}

// Independent confusion-matrix oracle: count the full K x K matrix, then read
// tp/fp/fn off its rows and columns.
double confusion_oracle(const std::vector<PredictionRecord>& records) {
  const auto& labels = relation_labels();
  const std::size_t k = labels.size();
  std::vector<std::vector<std::size_t>> cm(k, std::vector<std::size_t>(k, 0));
  auto idx = [&](const std::string& s) {
    return static_cast<std::size_t>(std::find(labels.begin(), labels.end(), s) - labels.begin());
  };
  for (const auto& r : records) ++cm[idx(r.gold)][idx(r.predicted)];
  const std::size_t neg = idx(std::string(kNoRelation));
  std::size_t tp = 0, pred_pos = 0, gold_pos = 0;
  for (std::size_t g = 0; g < k; ++g) {
    for (std::size_t p = 0; p < k; ++p) {
      if (g == p && g != neg) tp += cm[g][p];
      if (p != neg) pred_pos += cm[g][p];
      if (g != neg) gold_pos += cm[g][p];
    }
  }
  const double prec = pred_pos == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pred_pos);
  const double recall = gold_pos == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(gold_pos);
  return prec + recall == 0.0 ? 0.0 : 2.0 * prec * recall / (prec + recall);
}

TEST(MicroF1Test, DocumentedExamples) {
  const std::string r1 = relation_labels()[1];
  const std::string no(kNoRelation);
  EXPECT_EQ(micro_f1(std::vector{rec(r1, r1), rec(no, no)}), 1.0);
  EXPECT_NEAR(micro_f1(std::vector{rec(r1, r1), rec(r1, no), rec(no, no)}), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(micro_f1(std::vector{rec(r1, no), rec(no, no)}), 0.0);
  EXPECT_EQ(micro_f1(std::vector{rec(no, no)}), 0.0);
}

TEST(MicroF1Test, WrongPositiveCountsAsFalsePositiveAndFalseNegative) {
  const auto& l = relation_labels();
  // tp 0, fp 1, fn 1.
  EXPECT_EQ(micro_f1(std::vector{rec(l[1], l[2])}), 0.0);
  // tp 1, fp 1 (gold no_relation), fn 0: P = 0.5, R = 1.
  EXPECT_NEAR(micro_f1(std::vector{rec(l[1], l[1]), rec(std::string(kNoRelation), l[3])}), 2.0 / 3.0,
              1e-15);
}

TEST(MicroF1Test, ErrorsOnEmptyOrUnknownLabel) {
  EXPECT_THROW(micro_f1(std::vector<PredictionRecord>{}), ContractError);
  EXPECT_THROW(micro_f1(std::vector{rec("bogus", "no_relation")}), LabelError);
  EXPECT_THROW(micro_f1(std::vector{rec("no_relation", "bogus")}), LabelError);
}

TEST(MicroF1Test, ExactMatchWithConfusionMatrixOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto records = random_records(rng, 1 + rng.index(200));
    ASSERT_EQ(micro_f1(records), confusion_oracle(records)) << "trial " << trial;
  }
}

TEST(MicroF1Test, PermutationInvariantAndBounded) {
  Rng rng(37);
  for (int trial = 0; trial < 100; ++trial) {
    auto records = random_records(rng, 50);
    const double f = micro_f1(records);
    rng.shuffle(records);
    EXPECT_EQ(micro_f1(records), f);
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
  }
}

TEST(RelationReportTest, CountsMatchHistogramOracle) {
  Rng rng(41);
  const auto records = random_records(rng, 500);
  const auto rows = per_relation_report(records);
  std::map<std::string, std::size_t> gold, pred, correct;
  for (const auto& r : records) {
    ++gold[r.gold];
    ++pred[r.predicted];
    if (r.gold == r.predicted) ++correct[r.gold];
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    EXPECT_EQ(row.gold, gold[row.relation]);
    EXPECT_EQ(row.predicted, pred[row.relation]);
    EXPECT_EQ(row.correct, correct[row.relation]);
    EXPECT_LE(row.correct, row.gold);
    if (i > 0) EXPECT_GE(rows[i - 1].gold, row.gold);
    total += row.gold;
  }
  EXPECT_EQ(total, records.size());
  EXPECT_EQ(rows.size(), gold.size());
}

TEST(RelationReportTest, SingleRelation) {
  const std::string r = relation_labels()[2];
  const auto rows = per_relation_report(std::vector{rec(r, r), rec(r, r), rec(r, r)});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].gold, 3u);
  EXPECT_EQ(rows[0].correct, 3u);
  EXPECT_EQ(rows[0].f1, 1.0);
  EXPECT_NE(format_relation_report(rows).find(r), std::string::npos);
}

TEST(GapReportTest, SubtractsScores) {
  Rng rng(43);
  const auto a = random_records(rng, 100);
  const auto b = random_records(rng, 100);
  const GapReport same = gap_report(a, a);
  EXPECT_EQ(same.gap, 0.0);
  const GapReport g = gap_report(a, b);
  EXPECT_EQ(g.id, micro_f1(a));
  EXPECT_EQ(g.ood, micro_f1(b));
  EXPECT_EQ(g.gap, micro_f1(a) - micro_f1(b));
}

TEST(MeanStdTest, SampleStandardDeviation) {
  const std::vector<double> v{1.0, 2.0, 3.0};
  const MeanStd s = mean_std(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.std, 1.0);
  EXPECT_EQ(mean_std(std::vector<double>{5.0}).std, 0.0);
  EXPECT_THROW(mean_std(std::vector<double>{}), ContractError);
}

TEST(PredictionsFileTest, JsonlRoundTripIsExact) {
  PredictionRecord r = rec(relation_labels()[1], std::string(kNoRelation), "test_id-000007");
  r.logits = {0.1, -1e-300, 3.141592653589793, 1.0 / 3.0};
  r.variance = 0.123456789012345678;
  const std::vector<PredictionRecord> records{r, rec("no_relation", "no_relation", "b")};
  const auto path = std::filesystem::path(::testing::TempDir()) / "vibre_preds" / "p.jsonl";
  write_predictions_jsonl(path, records);
  EXPECT_EQ(read_predictions_jsonl(path), records);
}

}  // namespace
}  // namespace vibre
