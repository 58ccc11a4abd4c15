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

#ifndef VIBRE_ANALYSIS_HPP_
#define VIBRE_ANALYSIS_HPP_

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vibre/evaluation.hpp"
#include "vibre/method.hpp"
#include "vibre/model.hpp"
#include "vibre/tensor.hpp"
#include "vibre/vib.hpp"

namespace vibre {

/// Entity variance requested for a sequence without entity tokens.
class VarianceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Mean of sigma^2 over the entity rows of sigma and all their dimensions.
double mean_entity_variance(const Tensor& sigma, const EntityMask& mask);

inline constexpr double kBinWidth = 0.1;

struct BinRelation {
  std::string relation;
  std::size_t correct = 0;
  std::size_t gold = 0;
};

/// Half-open variance interval [lower, upper).
struct VarianceBin {
  std::size_t index = 0;  // floor(variance / width)
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double proportion = 0.0;
  std::vector<BinRelation> relations;  // by gold relation, sorted by name
  std::vector<BinRelation> top;        // up to three, by correct count
};

std::size_t variance_bin_index(double variance);

/// Contiguous bins from the lowest to the highest occupied one.
std::vector<VarianceBin> variance_bins(std::span<const PredictionRecord> records);

struct CurvePoint {
  double percent = 0.0;
  std::size_t count = 0;
  double micro_f1 = 0.0;
};

/// Micro-F1 of the top p% of records by variance, highest first. Records
/// tied with the last one admitted are admitted too, so equal variances give
/// a flat curve.
std::vector<CurvePoint> variance_sorted_f1(std::span<const PredictionRecord> records,
                                           std::span<const double> percentages);

std::vector<double> default_percentages();

struct AttributionResult {
  std::string example_id;
  std::vector<std::string> tokens;  // marked sequence
  std::vector<double> scores;       // one per token; 0 on markers
  std::string gold;
  std::string predicted;
  double variance = 0.0;
};

/// Gold-logit drop of sequence `sequence` when input row `row` is zeroed.
double occlusion_delta(const ModelState& model, const Batch& batch, std::size_t sequence,
                       std::size_t row);

/// Zero-embedding occlusion of every non-marker token, scored on the gold
/// relation logit.
AttributionResult occlusion_attribution(const ModelState& model, const Vocabulary& vocab,
                                        const Example& example, Method method);

void write_bins_csv(const std::filesystem::path& path, std::span<const VarianceBin> bins);
void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve);
void write_attributions_jsonl(const std::filesystem::path& path,
                              std::span<const AttributionResult> results);

/// x/y series for external plotting tools.
nlohmann::json curve_plot_data(const std::string& label, std::span<const CurvePoint> curve);

}  // namespace vibre

#endif  // VIBRE_ANALYSIS_HPP_
