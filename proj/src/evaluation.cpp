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

#include "vibre/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "vibre/analysis.hpp"
#include "vibre/io.hpp"

namespace vibre {

namespace {

std::size_t label_id(const std::string& label) {
  const auto& labels = relation_labels();
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw LabelError("unknown relation label '" + label + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

double f1_from(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

}  // namespace

std::vector<PredictionRecord> predict(const ModelState& model, const Vocabulary& vocab,
                                      std::span<const Example> examples, Method method,
                                      std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("predict: batch_size must be positive");
  NoGradGuard no_grad;
  const auto& labels = relation_labels();
  std::vector<PredictionRecord> records;
  records.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    std::vector<MarkedExample> marked;
    for (std::size_t i = start; i < end; ++i) {
      marked.push_back(mark_entities(inference_view(examples[i], method), vocab,
                                     model.config.max_sequence_length));
    }
    const Batch batch = make_batch(marked);
    const ForwardResult fr = forward(model, batch);
    const std::size_t n_rel = fr.logits.dim(1);
    for (std::size_t i = 0; i < batch.size; ++i) {
      PredictionRecord rec;
      rec.example_id = examples[start + i].id;
      rec.gold = examples[start + i].relation;
      const auto row = fr.logits.data().subspan(i * n_rel, n_rel);
      rec.logits.assign(row.begin(), row.end());
      const auto best = std::max_element(rec.logits.begin(), rec.logits.end()) - rec.logits.begin();
      rec.predicted = labels.at(static_cast<std::size_t>(best));
      if (fr.encoded.sigma.defined()) {
        const std::size_t d = fr.encoded.sigma.dim(1);
        const std::size_t len = batch.seq_len;
        const auto sig = fr.encoded.sigma.data().subspan(i * len * d, len * d);
        const auto bits = batch.mask.bits().subspan(i * len, len);
        rec.variance = mean_entity_variance(Tensor({len, d}, std::vector<double>(sig.begin(), sig.end())),
                                            EntityMask(std::vector<std::uint8_t>(bits.begin(), bits.end())));
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

double micro_f1(std::span<const PredictionRecord> records) {
  if (records.empty()) throw ContractError("micro_f1 needs at least one record");
  const std::size_t negative = relation_index(kNoRelation);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& r : records) {
    const std::size_t g = label_id(r.gold);
    const std::size_t p = label_id(r.predicted);
    if (p != negative && p == g) ++tp;
    if (p != negative && p != g) ++fp;
    if (g != negative && p != g) ++fn;
  }
  return f1_from(tp, fp, fn);
}

std::vector<RelationRow> per_relation_report(std::span<const PredictionRecord> records) {
  std::map<std::string, RelationRow> rows;
  std::map<std::string, std::size_t> predicted;
  for (const auto& r : records) {
    label_id(r.gold);
    label_id(r.predicted);
    auto& row = rows[r.gold];
    row.relation = r.gold;
    ++row.gold;
    if (r.predicted == r.gold) ++row.correct;
    ++predicted[r.predicted];
  }
  std::vector<RelationRow> out;
  for (auto& [name, row] : rows) {
    row.predicted = predicted[name];
    row.f1 = 2.0 * static_cast<double>(row.correct) / static_cast<double>(row.gold + row.predicted);
    out.push_back(row);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RelationRow& a, const RelationRow& b) { return a.gold > b.gold; });
  return out;
}

GapReport gap_report(std::span<const PredictionRecord> id_records,
                     std::span<const PredictionRecord> ood_records) {
  GapReport g;
  g.id = micro_f1(id_records);
  g.ood = micro_f1(ood_records);
  g.gap = g.id - g.ood;
  return g;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw ContractError("mean_std of an empty set");
  MeanStd s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

nlohmann::ordered_json record_to_json(const PredictionRecord& r) {
  nlohmann::ordered_json j;
  j["example_id"] = r.example_id;
  j["gold"] = r.gold;
  j["predicted"] = r.predicted;
  j["logits"] = r.logits;
  j["variance"] = r.variance;
  return j;
}

void write_predictions_jsonl(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
  auto out = open_output(path);
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  finish_output(out, path);
}

std::vector<PredictionRecord> read_predictions_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back(PredictionRecord{j.at("example_id").get<std::string>(), j.at("gold").get<std::string>(),
                                     j.at("predicted").get<std::string>(),
                                     j.at("logits").get<std::vector<double>>(), j.at("variance").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void write_relation_report_csv(const std::filesystem::path& path, std::span<const RelationRow> rows) {
  auto out = open_output(path);
  out << "relation,correct,gold,predicted,f1\n";
  for (const auto& r : rows) {
    out << r.relation << ',' << r.correct << ',' << r.gold << ',' << r.predicted << ',' << format_number(r.f1)
        << '\n';
  }
  finish_output(out, path);
}

std::string format_relation_report(std::span<const RelationRow> rows) {
  std::ostringstream os;
  os << std::left << std::setw(28) << "relation" << std::right << std::setw(16) << "correct/gold"
     << std::setw(8) << "F1" << '\n';
  for (const auto& r : rows) {
    const std::string counts = "(" + std::to_string(r.correct) + "/" + std::to_string(r.gold) + ")";
    os << std::left << std::setw(28) << r.relation << std::right << std::setw(16) << counts << std::setw(8)
       << std::fixed << std::setprecision(1) << 100.0 * r.f1 << '\n';
  }
  return os.str();
}

}  // namespace vibre
