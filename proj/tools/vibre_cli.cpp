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

// Command-line entry point: gen-data, train, eval, analyze.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <array>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "vibre/analysis.hpp"
#include "vibre/config.hpp"
#include "vibre/corpus.hpp"
#include "vibre/evaluation.hpp"
#include "vibre/io.hpp"
#include "vibre/model.hpp"
#include "vibre/training.hpp"

namespace fs = std::filesystem;
using namespace vibre;

namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON run config (defaults apply to missing keys)");
  cmd->add_option("--out", o.out, "Output directory (overrides out_dir)");
  cmd->add_option("--seed", o.seeds, "Seed override; repeatable");
  cmd->add_option("--method", o.methods, "Method override; repeatable");
  cmd->add_option("--set", o.overrides, "Override a config key, e.g. corpus.rho=1.0; repeatable");
}

RunConfig resolve_config(const CommonOptions& o) {
  nlohmann::json j = nlohmann::json::object();
  if (!o.config.empty()) {
    try {
      j = nlohmann::json::parse(read_text_file(o.config));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file '" + o.config + "' is not valid JSON: " + e.what());
    }
  }
  for (const auto& s : o.overrides) apply_override(j, s);
  if (!o.out.empty()) j["out_dir"] = o.out;
  if (!o.seeds.empty()) j["seeds"] = o.seeds;
  if (!o.methods.empty()) j["methods"] = o.methods;
  return run_config_from_json(j);
}

std::string sha256_file(const fs::path& path) {
  const std::string content = read_text_file(path);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(content.data(), content.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("hashing '" + path.string() + "' failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

const std::array<std::string, 4> kSplits = {"train", "dev", "test_id", "test_ood"};

fs::path data_dir(const RunConfig& c) { return c.out_dir / "data"; }
fs::path run_dir(const RunConfig& c, Method m, std::uint64_t seed) {
  return c.out_dir / "runs" / std::string(method_name(m)) / ("seed" + std::to_string(seed));
}

nlohmann::json corpus_section(const RunConfig& c) { return run_config_to_json(c)["corpus"]; }

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  finish_output(out, path);
}

int cmd_gen_data(const RunConfig& c) {
  const EntityLexicon lexicon = build_lexicon(c);
  const Corpus corpus = build_corpus(c, lexicon);
  const std::map<std::string, const std::vector<Example>*> splits = {
      {"train", &corpus.train}, {"dev", &corpus.dev}, {"test_id", &corpus.test_id}, {"test_ood", &corpus.test_ood}};
  fs::create_directories(data_dir(c));
  nlohmann::json manifest;
  manifest["seed"] = c.corpus.seed;
  manifest["corpus"] = corpus_section(c);
  for (const auto& name : kSplits) {
    const fs::path path = data_dir(c) / (name + ".jsonl");
    write_jsonl(path, *splits.at(name));
    manifest["files"][name] = {{"path", name + ".jsonl"}, {"examples", splits.at(name)->size()},
                               {"sha256", sha256_file(path)}};
  }
  write_json(data_dir(c) / "manifest.json", manifest);
  std::cout << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test_id.size() << "/"
            << corpus.test_ood.size() << " examples to " << data_dir(c) << "\n";
  return 0;
}

/// Loads the four splits after checking them against the manifest.
Corpus load_corpus(const RunConfig& c) {
  const fs::path manifest_path = data_dir(c) / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw IoError("data manifest '" + manifest_path.string() + "' not found; run gen-data first");
  }
  const auto manifest = nlohmann::json::parse(read_text_file(manifest_path));
  if (manifest.at("corpus") != corpus_section(c)) {
    throw ConfigError("config section 'corpus' differs from the one recorded in " + manifest_path.string());
  }
  Corpus corpus;
  const std::map<std::string, std::vector<Example>*> splits = {
      {"train", &corpus.train}, {"dev", &corpus.dev}, {"test_id", &corpus.test_id}, {"test_ood", &corpus.test_ood}};
  for (const auto& name : kSplits) {
    const fs::path path = data_dir(c) / (name + ".jsonl");
    if (sha256_file(path) != manifest.at("files").at(name).at("sha256").get<std::string>()) {
      throw IoError("'" + path.string() + "' does not match its manifest hash");
    }
    *splits.at(name) = read_jsonl(path);
  }
  return corpus;
}

int cmd_train(const RunConfig& c, bool resume, std::size_t stop_after) {
  const Corpus corpus = load_corpus(c);
  const EntityLexicon lexicon = build_lexicon(c);
  const Vocabulary vocab = Vocabulary::build(corpus.train);
  auto summary_path = c.out_dir / "train_summary.csv";
  std::ostringstream summary;
  summary << "method,seed,best_dev_micro_f1,best_epoch,epochs_run\n";
  for (Method m : c.methods) {
    for (std::uint64_t seed : c.seeds) {
      const TrainConfig tc = train_config_for(c, m, seed);
      const fs::path dir = run_dir(c, m, seed);
      const fs::path progress_path = dir / "progress.json";
      TrainProgress progress;
      if (resume && fs::exists(progress_path)) {
        TrainConfig saved;
        progress = progress_from_checkpoint(load_checkpoint(progress_path), &saved);
        if (train_config_to_json(saved) != train_config_to_json(tc)) {
          throw ConfigError("resume state in '" + progress_path.string() + "' was written with another train config");
        }
        std::cout << method_name(m) << " seed " << seed << ": resuming after epoch " << progress.epochs_done << "\n";
      } else {
        progress = start_training(c.model, tc, vocab.size());
      }
      const std::size_t start_epoch = progress.epochs_done;
      TrainInputs inputs{&vocab, corpus.train, corpus.dev, &lexicon};
      struct Interrupt {};
      try {
        train(progress, tc, inputs, [&](const TrainProgress& p) {
          save_checkpoint(progress_path, progress_to_checkpoint(p, tc, vocab));
          std::cout << method_name(m) << " seed " << seed << " epoch " << p.epochs_done << ": dev micro-F1 "
                    << std::fixed << std::setprecision(4) << p.log.back().dev_micro_f1.value_or(0.0) << "\n";
          if (stop_after > 0 && p.epochs_done - start_epoch >= stop_after && p.epochs_done < tc.epochs && !p.stopped) {
            throw Interrupt{};
          }
        });
      } catch (const Interrupt&) {
        std::cout << method_name(m) << " seed " << seed << ": stopped after epoch " << progress.epochs_done
                  << " (resume with --resume)\n";
        return 0;
      }
      save_checkpoint(dir / "model.json", model_checkpoint(progress.best, m, vocab));
      write_log_csv(dir / "train_log.csv", progress.log);
      summary << method_name(m) << ',' << seed << ',' << format_number(progress.best_dev) << ','
              << progress.best_epoch << ',' << progress.epochs_done << '\n';
    }
  }
  auto out = open_output(summary_path);
  out << summary.str();
  finish_output(out, summary_path);
  return 0;
}

Checkpoint load_model(const RunConfig& c, Method m, std::uint64_t seed, const Vocabulary& vocab) {
  const fs::path path = run_dir(c, m, seed) / "model.json";
  if (!fs::exists(path)) throw IoError("checkpoint '" + path.string() + "' not found; run train first");
  Checkpoint ck = load_checkpoint(path);
  if (ck.method != method_name(m)) {
    throw CheckpointError("checkpoint '" + path.string() + "' holds method " + ck.method);
  }
  if (ck.vocab.tokens() != vocab.tokens()) {
    throw CheckpointError("checkpoint '" + path.string() + "' vocabulary does not match the training data");
  }
  if (ck.relations != relation_labels()) {
    throw CheckpointError("checkpoint '" + path.string() + "' relation set does not match");
  }
  return ck;
}

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << 100.0 * v;
  return os.str();
}

int cmd_eval(const RunConfig& c) {
  const Corpus corpus = load_corpus(c);
  const Vocabulary vocab = Vocabulary::build(corpus.train);
  const fs::path eval_dir = c.out_dir / "eval";
  std::ostringstream per_seed, summary, table;
  per_seed << "method,seed,id_micro_f1,ood_micro_f1,gap\n";
  summary << "method,seeds,id_mean,id_std,ood_mean,ood_std,gap_mean,gap_std\n";
  table << std::left << std::setw(22) << "method" << std::setw(16) << "ID" << std::setw(16) << "OOD"
        << "gap\n";
  for (Method m : c.methods) {
    std::vector<double> ids, oods, gaps;
    for (std::uint64_t seed : c.seeds) {
      const Checkpoint ck = load_model(c, m, seed, vocab);
      const auto id = predict(ck.model, vocab, corpus.test_id, m, c.eval_batch_size);
      const auto ood = predict(ck.model, vocab, corpus.test_ood, m, c.eval_batch_size);
      const GapReport g = gap_report(id, ood);
      const std::string tag = std::string(method_name(m)) + "_seed" + std::to_string(seed);
      write_predictions_jsonl(eval_dir / (tag + "_id.jsonl"), id);
      write_predictions_jsonl(eval_dir / (tag + "_ood.jsonl"), ood);
      write_relation_report_csv(eval_dir / (tag + "_id_relations.csv"), per_relation_report(id));
      write_relation_report_csv(eval_dir / (tag + "_ood_relations.csv"), per_relation_report(ood));
      per_seed << method_name(m) << ',' << seed << ',' << format_number(g.id) << ',' << format_number(g.ood) << ','
               << format_number(g.gap) << '\n';
      ids.push_back(g.id);
      oods.push_back(g.ood);
      gaps.push_back(g.gap);
    }
    const MeanStd i = mean_std(ids), o = mean_std(oods), g = mean_std(gaps);
    summary << method_name(m) << ',' << c.seeds.size() << ',' << format_number(i.mean) << ','
            << format_number(i.std) << ',' << format_number(o.mean) << ',' << format_number(o.std) << ','
            << format_number(g.mean) << ',' << format_number(g.std) << '\n';
    table << std::left << std::setw(22) << method_name(m) << std::setw(16) << (pct(i.mean) + " ± " + pct(i.std))
          << std::setw(16) << (pct(o.mean) + " ± " + pct(o.std)) << pct(g.mean) << '\n';
  }
  for (const auto& [name, text] : {std::pair<std::string, std::string>{"results.csv", per_seed.str()},
                                   {"summary.csv", summary.str()}, {"summary.txt", table.str()}}) {
    auto out = open_output(eval_dir / name);
    out << text;
    finish_output(out, eval_dir / name);
  }
  std::cout << table.str();
  return 0;
}

int cmd_analyze(const RunConfig& c, const std::string& checkpoint_path) {
  const Corpus corpus = load_corpus(c);
  const Vocabulary vocab = Vocabulary::build(corpus.train);
  std::vector<std::pair<std::string, Checkpoint>> targets;
  if (!checkpoint_path.empty()) {
    targets.emplace_back(fs::path(checkpoint_path).parent_path().filename().string(), load_checkpoint(checkpoint_path));
    if (targets.back().second.vocab.tokens() != vocab.tokens()) {
      throw CheckpointError("checkpoint '" + checkpoint_path + "' vocabulary does not match the training data");
    }
  } else {
    for (std::uint64_t seed : c.seeds) {
      targets.emplace_back("seed" + std::to_string(seed), load_model(c, Method::kVib, seed, vocab));
    }
  }
  for (auto& [tag, ck] : targets) {
    if (ck.method != method_name(Method::kVib) || !ck.model.config.use_vib) {
      throw CheckpointError("analyze needs a vib checkpoint; this one holds method '" + ck.method +
                            "', which has no sigma");
    }
    const fs::path dir = c.out_dir / "analysis" / tag;
    nlohmann::json plot = nlohmann::json::array();
    for (const auto& [split, examples] :
         {std::pair<std::string, const std::vector<Example>*>{"id", &corpus.test_id}, {"ood", &corpus.test_ood}}) {
      const auto records = predict(ck.model, vocab, *examples, Method::kVib, c.eval_batch_size);
      write_bins_csv(dir / (split + "_bins.csv"), variance_bins(records));
      const auto pcts = default_percentages();
      const auto curve = variance_sorted_f1(records, pcts);
      write_curve_csv(dir / (split + "_curve.csv"), curve);
      plot.push_back(curve_plot_data(split, curve));
      std::vector<AttributionResult> attributions;
      for (std::size_t i = 0; i < std::min(c.attribution_samples, examples->size()); ++i) {
        attributions.push_back(occlusion_attribution(ck.model, vocab, (*examples)[i], Method::kVib));
      }
      write_attributions_jsonl(dir / (split + "_attributions.jsonl"), attributions);
      double mean_var = 0.0;
      for (const auto& r : records) mean_var += r.variance;
      mean_var /= static_cast<double>(records.size());
      std::cout << tag << " " << split << ": micro-F1 " << pct(micro_f1(records)) << ", mean entity variance "
                << format_number(mean_var) << "\n";
    }
    write_json(dir / "plot_data.json", plot);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  vibre::configure_allocator();
  CLI::App app{"Entity-bias relation extraction with a variational information bottleneck"};
  app.require_subcommand(1);
  CommonOptions gen_opts, train_opts, eval_opts, analyze_opts;
  bool resume = false;
  std::size_t stop_after = 0;
  std::string checkpoint;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus and its manifest");
  add_common(gen, gen_opts);
  auto* tr = app.add_subcommand("train", "Train every (method, seed) pair");
  add_common(tr, train_opts);
  tr->add_flag("--resume", resume, "Continue from saved progress where present");
  tr->add_option("--stop-after", stop_after, "Stop after this many epochs (for interrupted runs)");
  auto* ev = app.add_subcommand("eval", "ID/OOD Micro-F1 mean and std per method");
  add_common(ev, eval_opts);
  auto* an = app.add_subcommand("analyze", "Variance bins, sorted-F1 curves and occlusion attributions");
  add_common(an, analyze_opts);
  an->add_option("--checkpoint", checkpoint, "Analyse this checkpoint instead of the configured vib runs");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_gen_data(resolve_config(gen_opts));
    if (tr->parsed()) return cmd_train(resolve_config(train_opts), resume, stop_after);
    if (ev->parsed()) return cmd_eval(resolve_config(eval_opts));
    if (an->parsed()) return cmd_analyze(resolve_config(analyze_opts), checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
