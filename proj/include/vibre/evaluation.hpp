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

#ifndef VIBRE_EVALUATION_HPP_
#define VIBRE_EVALUATION_HPP_

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vibre/corpus.hpp"
#include "vibre/method.hpp"
#include "vibre/model.hpp"

namespace vibre {

struct PredictionRecord {
  std::string example_id;
  std::string gold;
  std::string predicted;
  std::vector<double> logits;
  double variance = 0.0;  // mean entity sigma^2; 0 for models without the VIB stage

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// Inference with z = mu and dropout off, in batches of batch_size in input
/// order. The method's input view is applied to every example.
std::vector<PredictionRecord> predict(const ModelState& model, const Vocabulary& vocab,
                                      std::span<const Example> examples, Method method,
                                      std::size_t batch_size = 64);

/// Micro-F1 with no_relation as the negative class. Throws ContractError on
/// an empty set and LabelError on a label outside the relation set.
double micro_f1(std::span<const PredictionRecord> records);

struct RelationRow {
  std::string relation;
  std::size_t correct = 0;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  double f1 = 0.0;
};

/// One row per gold relation present, by gold count descending, ties by name.
std::vector<RelationRow> per_relation_report(std::span<const PredictionRecord> records);

struct GapReport {
  double id = 0.0;
  double ood = 0.0;
  double gap = 0.0;
};

GapReport gap_report(std::span<const PredictionRecord> id_records,
                     std::span<const PredictionRecord> ood_records);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

nlohmann::ordered_json record_to_json(const PredictionRecord& record);
void write_predictions_jsonl(const std::filesystem::path& path, std::span<const PredictionRecord> records);
std::vector<PredictionRecord> read_predictions_jsonl(const std::filesystem::path& path);

void write_relation_report_csv(const std::filesystem::path& path, std::span<const RelationRow> rows);
std::string format_relation_report(std::span<const RelationRow> rows);

}  // namespace vibre

#endif  // VIBRE_EVALUATION_HPP_
