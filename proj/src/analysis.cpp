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

#include "vibre/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "vibre/io.hpp"

namespace vibre {

double mean_entity_variance(const Tensor& sigma, const EntityMask& mask) {
  if (sigma.rank() != 2 || sigma.dim(0) != mask.size()) {
    throw DimensionError("mean_entity_variance: sigma " + shape_string(sigma.shape()) + " vs mask of " +
                         std::to_string(mask.size()) + " rows");
  }
  const std::size_t d = sigma.dim(1);
  const auto s = sigma.data();
  double total = 0.0;
  std::size_t rows = 0;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) continue;
    ++rows;
    for (std::size_t c = 0; c < d; ++c) total += s[r * d + c] * s[r * d + c];
  }
  if (rows == 0) throw VarianceError("mean entity variance is undefined without entity tokens");
  return total / static_cast<double>(rows * d);
}

std::size_t variance_bin_index(double variance) {
  if (!(variance >= 0.0) || !std::isfinite(variance)) {
    throw DomainError("variance must be finite and non-negative");
  }
  return static_cast<std::size_t>(std::floor(variance / kBinWidth));
}

std::vector<VarianceBin> variance_bins(std::span<const PredictionRecord> records) {
  if (records.empty()) return {};
  std::vector<std::size_t> index(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) index[i] = variance_bin_index(records[i].variance);
  const auto [lo, hi] = std::minmax_element(index.begin(), index.end());
  std::vector<VarianceBin> bins;
  for (std::size_t b = *lo; b <= *hi; ++b) {
    VarianceBin bin;
    bin.index = b;
    bin.lower = static_cast<double>(b) * kBinWidth;
    bin.upper = static_cast<double>(b + 1) * kBinWidth;
    bins.push_back(bin);
  }
  std::vector<std::map<std::string, BinRelation>> rel(bins.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::size_t k = index[i] - *lo;
    ++bins[k].count;
    auto& br = rel[k][records[i].gold];
    br.relation = records[i].gold;
    ++br.gold;
    if (records[i].predicted == records[i].gold) ++br.correct;
  }
  for (std::size_t k = 0; k < bins.size(); ++k) {
    bins[k].proportion = static_cast<double>(bins[k].count) / static_cast<double>(records.size());
    for (auto& [name, br] : rel[k]) bins[k].relations.push_back(br);
    bins[k].top = bins[k].relations;
    std::stable_sort(bins[k].top.begin(), bins[k].top.end(), [](const BinRelation& a, const BinRelation& b) {
      return a.correct != b.correct ? a.correct > b.correct : a.gold > b.gold;
    });
    if (bins[k].top.size() > 3) bins[k].top.resize(3);
  }
  return bins;
}

std::vector<CurvePoint> variance_sorted_f1(std::span<const PredictionRecord> records,
                                           std::span<const double> percentages) {
  if (records.empty()) throw ContractError("variance_sorted_f1 needs at least one record");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].variance > records[b].variance;
  });
  std::vector<CurvePoint> curve;
  for (double p : percentages) {
    if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentages must lie in (0, 100]");
    const double n = static_cast<double>(records.size());
    std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(p * n / 100.0)));
    k = std::min(k, records.size());
    const double cutoff = records[order[k - 1]].variance;
    while (k < order.size() && records[order[k]].variance == cutoff) ++k;
    std::vector<PredictionRecord> subset;
    subset.reserve(k);
    for (std::size_t i = 0; i < k; ++i) subset.push_back(records[order[i]]);
    curve.push_back(CurvePoint{p, k, micro_f1(subset)});
  }
  return curve;
}

std::vector<double> default_percentages() { return {10, 20, 30, 40, 50, 60, 70, 80, 90, 100}; }

double occlusion_delta(const ModelState& model, const Batch& batch, std::size_t sequence, std::size_t row) {
  if (sequence >= batch.size || row >= batch.ids.size()) throw ContractError("occlusion_delta: index out of range");
  NoGradGuard no_grad;
  const std::size_t gold = batch.labels[sequence];
  const std::size_t n_rel = model.config.n_relations;
  const Tensor full = forward(model, batch).logits;
  EncodeOptions opts;
  opts.occluded_rows = {row};
  const Tensor occluded = forward(model, batch, opts).logits;
  return full.value(sequence * n_rel + gold) - occluded.value(sequence * n_rel + gold);
}

AttributionResult occlusion_attribution(const ModelState& model, const Vocabulary& vocab,
                                        const Example& example, Method method) {
  const Example view = inference_view(example, method);
  const MarkedExample marked = mark_entities(view, vocab, model.config.max_sequence_length);
  const Batch batch = make_batch(std::span<const MarkedExample>(&marked, 1));

  AttributionResult res;
  res.example_id = example.id;
  res.tokens = marked.tokens;
  res.gold = example.relation;
  const auto records = predict(model, vocab, std::span<const Example>(&example, 1), method);
  res.predicted = records.front().predicted;
  res.variance = records.front().variance;
  res.scores.assign(marked.tokens.size(), 0.0);
  for (std::size_t t = 0; t < marked.tokens.size(); ++t) {
    if (marked.ids[t] == Vocabulary::kSubjMarker || marked.ids[t] == Vocabulary::kObjMarker) continue;
    res.scores[t] = occlusion_delta(model, batch, 0, t);
  }
  return res;
}

void write_bins_csv(const std::filesystem::path& path, std::span<const VarianceBin> bins) {
  auto out = open_output(path);
  out << "lower,upper,count,proportion,top1,top2,top3\n";
  for (const auto& b : bins) {
    out << format_number(b.lower) << ',' << format_number(b.upper) << ',' << b.count << ','
        << format_number(b.proportion);
    for (std::size_t i = 0; i < 3; ++i) {
      out << ',';
      if (i < b.top.size()) {
        out << b.top[i].relation << " (" << b.top[i].correct << '/' << b.top[i].gold << ')';
      }
    }
    out << '\n';
  }
  finish_output(out, path);
}

void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve) {
  auto out = open_output(path);
  out << "percent,count,micro_f1\n";
  for (const auto& c : curve) {
    out << format_number(c.percent) << ',' << c.count << ',' << format_number(c.micro_f1) << '\n';
  }
  finish_output(out, path);
}

void write_attributions_jsonl(const std::filesystem::path& path, std::span<const AttributionResult> results) {
  auto out = open_output(path);
  for (const auto& r : results) {
    nlohmann::ordered_json j;
    j["example_id"] = r.example_id;
    j["tokens"] = r.tokens;
    j["scores"] = r.scores;
    j["gold"] = r.gold;
    j["predicted"] = r.predicted;
    j["variance"] = r.variance;
    out << j.dump() << '\n';
  }
  finish_output(out, path);
}

nlohmann::json curve_plot_data(const std::string& label, std::span<const CurvePoint> curve) {
  nlohmann::json x = nlohmann::json::array();
  nlohmann::json y = nlohmann::json::array();
  for (const auto& c : curve) {
    x.push_back(c.percent);
    y.push_back(c.micro_f1);
  }
  return {{"label", label}, {"x", x}, {"y", y}, {"x_label", "percent of records (highest variance first)"},
          {"y_label", "micro_f1"}};
}

}  // namespace vibre
