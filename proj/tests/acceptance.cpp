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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "vibre/analysis.hpp"
#include "vibre/config.hpp"
#include "vibre/corpus.hpp"
#include "vibre/evaluation.hpp"
#include "vibre/grad_check.hpp"
#include "vibre/io.hpp"
#include "vibre/model.hpp"
#include "vibre/rng.hpp"
#include "vibre/training.hpp"
#include "vibre/vib.hpp"

namespace {

using namespace vibre;
using Clock = std::chrono::steady_clock;

// Training budget per run; keeps nine runs well inside the 30 minute limit.
constexpr std::size_t kEpochs = 5;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(2);
  os << v;
  return os.str();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_bits(const ModelState& a, const ModelState& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].shape() != pb[i].shape()) return false;
    if (!std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin())) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness of the full pipeline.

Outcome gradient_correctness(const Corpus& corpus) {
  const auto t0 = Clock::now();
  const std::vector<Example> pair(corpus.train.begin(), corpus.train.begin() + 2);
  const Vocabulary vocab = Vocabulary::build(pair);
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.ffn_width = 32;
  cfg.max_sequence_length = 64;
  cfg.use_vib = true;
  cfg.beta = 0.5;
  cfg.seed = 5;
  const ModelState model = ModelState::init(cfg, vocab.size());
  std::vector<MarkedExample> marked;
  for (const auto& ex : pair) marked.push_back(mark_entities(ex, vocab, cfg.max_sequence_length));
  const Batch batch = make_batch(marked);

  Rng rng(17);
  const Tensor eps = draw_noise({batch.ids.size(), cfg.d_model}, rng);
  EncodeOptions opts;
  opts.mode = Mode::kTrain;
  opts.rng = &rng;
  opts.eps = &eps;
  opts.dropout = false;

  // The adaptive weight is held at its value at the unperturbed point, as in
  // training where it is a detached constant for each step.
  double alpha = 0.0;
  {
    NoGradGuard no_grad;
    const ForwardResult fr = forward(model, batch, opts);
    alpha = total_loss(fr.logits, batch.labels, fr.encoded.mu, fr.encoded.sigma, batch.mask, batch.size).alpha;
  }
  auto f = [&] {
    const ForwardResult fr = forward(model, batch, opts);
    return add(softmax_cross_entropy(fr.logits, batch.labels),
               scale(vib_loss(fr.encoded.mu, fr.encoded.sigma, batch.mask, batch.size), alpha));
  };
  const GradCheckReport r = grad_check(f, model.parameters());
  const double secs = seconds_since(t0);
  const auto names = model.named_parameters();
  Outcome o;
  o.pass = r.max_relative_error < 1e-4 && secs < 60.0;
  o.detail = "max relative error " + sci(r.max_relative_error) + " over " + std::to_string(r.checked) +
             " entries (worst " + names[r.worst_param].first + "[" + std::to_string(r.worst_index) +
             "]), d_model 16, " + fmt(secs, 1) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Closed-form KL against Monte Carlo.

Outcome kl_oracle() {
  Rng rng(2026);
  double worst = 0.0;
  for (int pair = 0; pair < 20; ++pair) {
    const double mu = -2.0 + 4.0 * rng.uniform();
    const double sigma = 0.3 + 1.7 * rng.uniform();
    constexpr int kSamples = 1000000;
    double acc = 0.0;
    for (int i = 0; i < kSamples; ++i) {
      const double e = rng.normal();
      const double z = mu + sigma * e;
      // log q(z) - log p(z) with q = N(mu, sigma^2), p = N(0, 1).
      acc += -std::log(sigma) - 0.5 * e * e + 0.5 * z * z;
    }
    const double mc = acc / kSamples;
    const double closed = kl_to_standard_normal(Tensor({1, 1}, {mu}), Tensor({1, 1}, {sigma})).item();
    worst = std::max(worst, std::abs(mc - closed));
  }
  const double zero = kl_to_standard_normal(Tensor({1, 4}, {0, 0, 0, 0}), Tensor({1, 4}, {1, 1, 1, 1})).item();
  const double half = kl_to_standard_normal(Tensor({1, 1}, {1}), Tensor({1, 1}, {1})).item();
  Outcome o;
  o.pass = worst < 1e-2 && std::abs(zero) < 1e-12 && std::abs(half - 0.5) < 1e-12;
  o.detail = "worst |MC - closed form| " + sci(worst) + " over 20 pairs; KL(0,1) = " + sci(zero) +
             ", KL(1,1) - 0.5 = " + sci(half - 0.5);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Blending identities.

Outcome blending_identities(const Corpus& corpus, const Vocabulary& vocab, const ModelConfig& base) {
  Rng rng(33);
  bool zero_beta_exact = true;
  bool unmasked_exact = true;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.index(12), cols = 1 + rng.index(8);
    Tensor x = Tensor::zeros({rows, cols}), z = Tensor::zeros({rows, cols});
    for (auto& v : x.mutable_data()) v = 5.0 * rng.normal();
    for (auto& v : z.mutable_data()) v = 5.0 * rng.normal();
    std::vector<std::uint8_t> bits(rows);
    for (auto& b : bits) b = rng.bernoulli(0.5);
    const EntityMask mask(bits);
    for (double beta : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const Tensor y = blend(x, z, mask, beta);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const bool same = std::bit_cast<std::uint64_t>(y.at(r, c)) == std::bit_cast<std::uint64_t>(x.at(r, c));
          if (beta == 0.0 && !same) zero_beta_exact = false;
          if (!mask[r] && !same) unmasked_exact = false;
        }
      }
    }
  }

  ModelConfig cfg = base;
  cfg.use_vib = true;
  cfg.beta = 0.0;
  const ModelState with = ModelState::init(cfg, vocab.size());
  ModelState without = with.clone();
  without.config.use_vib = false;
  double worst = 0.0;
  for (std::size_t start = 0; start < 256; start += 64) {
    std::vector<MarkedExample> marked;
    for (std::size_t i = start; i < start + 64; ++i) {
      marked.push_back(mark_entities(corpus.test_id[i], vocab, cfg.max_sequence_length));
    }
    const Batch batch = make_batch(marked);
    NoGradGuard no_grad;
    const Tensor a = forward(with, batch).logits;
    const Tensor b = forward(without, batch).logits;
    Rng r1(start), r2(start);
    EncodeOptions o1, o2;
    o1.mode = o2.mode = Mode::kTrain;
    o1.rng = &r1;
    o2.rng = &r2;
    o1.dropout = o2.dropout = false;
    const Tensor c = forward(with, batch, o1).logits;
    const Tensor d = forward(without, batch, o2).logits;
    for (std::size_t i = 0; i < a.numel(); ++i) {
      worst = std::max({worst, std::abs(a.value(i) - b.value(i)), std::abs(c.value(i) - d.value(i))});
    }
  }
  Outcome o;
  o.pass = zero_beta_exact && unmasked_exact && worst <= 1e-12;
  o.detail = std::string("beta=0 bit-exact: ") + (zero_beta_exact ? "yes" : "no") +
             "; M=0 rows bit-exact for beta in {0,.25,.5,.75,1}: " + (unmasked_exact ? "yes" : "no") +
             "; max |logit difference| vs VIB-free pipeline " + sci(worst);
  return o;
}

// ---------------------------------------------------------------------------
// 4, 5, 7, 8. The desk-scale experiment.

struct RunResult {
  Method method = Method::kVanilla;
  std::uint64_t seed = 0;
  GapReport gap;
  std::vector<PredictionRecord> id, ood;
  TrainResult trained;
  double seconds = 0.0;
};

struct Experiment {
  RunConfig config;
  EntityLexicon lexicon;
  Corpus corpus;
  Vocabulary vocab;
  std::vector<RunResult> runs;
  double seconds = 0.0;

  const RunResult& get(Method m, std::uint64_t seed) const {
    for (const auto& r : runs) {
      if (r.method == m && r.seed == seed) return r;
    }
    throw std::logic_error("missing run");
  }
};

RunResult run_one(const Experiment& ex, Method method, std::uint64_t seed) {
  const auto t0 = Clock::now();
  RunResult r;
  r.method = method;
  r.seed = seed;
  const TrainConfig tc = train_config_for(ex.config, method, seed);
  const TrainInputs inputs{&ex.vocab, ex.corpus.train, ex.corpus.dev, &ex.lexicon};
  r.trained = train(ex.config.model, tc, inputs);
  r.id = predict(r.trained.model, ex.vocab, ex.corpus.test_id, method, ex.config.eval_batch_size);
  r.ood = predict(r.trained.model, ex.vocab, ex.corpus.test_ood, method, ex.config.eval_batch_size);
  r.gap = gap_report(r.id, r.ood);
  r.seconds = seconds_since(t0);
  return r;
}

void print_table(const Experiment& ex) {
  std::printf("  %-12s %-5s %8s %8s %8s %7s %7s\n", "method", "seed", "ID", "OOD", "gap", "dev", "secs");
  for (const auto& r : ex.runs) {
    std::printf("  %-12s %-5llu %8.2f %8.2f %8.2f %7.2f %7.1f\n", std::string(method_name(r.method)).c_str(),
                static_cast<unsigned long long>(r.seed), 100 * r.gap.id, 100 * r.gap.ood, 100 * r.gap.gap,
                100 * r.trained.best_dev, r.seconds);
  }
  std::fflush(stdout);
}

std::vector<double> collect(const Experiment& ex, Method m, double GapReport::*field) {
  std::vector<double> out;
  for (auto s : kSeeds) out.push_back(ex.get(m, s).gap.*field);
  return out;
}

Outcome bias_mitigation(const Experiment& ex) {
  const auto van_gap = mean_std(collect(ex, Method::kVanilla, &GapReport::gap));
  const auto vib_gap = mean_std(collect(ex, Method::kVib, &GapReport::gap));
  bool ood_every_seed = true;
  std::string per_seed;
  for (auto s : kSeeds) {
    const double a = ex.get(Method::kVib, s).gap.ood, b = ex.get(Method::kVanilla, s).gap.ood;
    ood_every_seed = ood_every_seed && a > b;
    per_seed += " " + fmt(100 * a, 1) + ">" + fmt(100 * b, 1);
  }
  const double reduction = van_gap.mean > 0 ? 1.0 - vib_gap.mean / van_gap.mean : 0.0;
  Outcome o;
  o.pass = van_gap.mean >= 0.10 && reduction >= 0.30 && ood_every_seed && ex.seconds < 1800.0;
  o.detail = "rho " + fmt(ex.config.corpus.rho, 2) + "; vanilla mean gap " + fmt(100 * van_gap.mean, 2) +
             " pts (need >= 10); vib mean gap " + fmt(100 * vib_gap.mean, 2) + " pts, reduction " +
             fmt(100 * reduction, 1) + "% (need >= 30%); vib OOD > vanilla OOD per seed:" + per_seed +
             "; experiment " + fmt(ex.seconds / 60.0, 1) + " min (need < 30)";
  return o;
}

Outcome baseline_ordering(const Experiment& ex) {
  const auto mask_id = mean_std(collect(ex, Method::kEntityMask, &GapReport::id));
  const auto van_id = mean_std(collect(ex, Method::kVanilla, &GapReport::id));
  Outcome o;
  o.pass = mask_id.mean < van_id.mean;
  o.detail = "entity_mask mean ID " + fmt(100 * mask_id.mean, 2) + " < vanilla mean ID " +
             fmt(100 * van_id.mean, 2);
  return o;
}

Outcome variance_coherence(const Experiment& ex) {
  bool exact = true, sums = true, shift = true;
  std::string detail;
  const std::vector<double> full{100.0};
  for (auto s : kSeeds) {
    const RunResult& r = ex.get(Method::kVib, s);
    double mean_id = 0.0, mean_ood = 0.0;
    for (const auto* records : {&r.id, &r.ood}) {
      if (variance_sorted_f1(*records, full).front().micro_f1 != micro_f1(*records)) exact = false;
      double total = 0.0;
      for (const auto& b : variance_bins(*records)) total += b.proportion;
      if (std::abs(total - 1.0) > 1e-9) sums = false;
    }
    for (const auto& p : r.id) mean_id += p.variance;
    for (const auto& p : r.ood) mean_ood += p.variance;
    mean_id /= static_cast<double>(r.id.size());
    mean_ood /= static_cast<double>(r.ood.size());
    if (!(mean_ood > mean_id)) shift = false;
    detail += " seed" + std::to_string(s) + " " + fmt(mean_ood, 4) + ">" + fmt(mean_id, 4);
  }
  Outcome o;
  o.pass = exact && sums && shift;
  o.detail = std::string("curve@100% == micro_f1: ") + (exact ? "yes" : "no") +
             "; bin proportions sum to 1: " + (sums ? "yes" : "no") + "; OOD > ID mean variance:" + detail;
  return o;
}

Outcome determinism(const Experiment& ex) {
  const auto dir = std::filesystem::temp_directory_path() / "vibre_acceptance";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "a");
  std::filesystem::create_directories(dir / "b");
  // Regenerate the corpus from the same config and compare the files.
  const EntityLexicon lexicon = build_lexicon(ex.config);
  const Corpus again = build_corpus(ex.config, lexicon);
  bool corpora = true;
  const std::vector<std::pair<std::string, const std::vector<Example>*>> splits_a = {
      {"train", &ex.corpus.train}, {"dev", &ex.corpus.dev}, {"test_id", &ex.corpus.test_id},
      {"test_ood", &ex.corpus.test_ood}};
  const std::vector<const std::vector<Example>*> splits_b = {&again.train, &again.dev, &again.test_id,
                                                             &again.test_ood};
  for (std::size_t i = 0; i < splits_a.size(); ++i) {
    write_jsonl(dir / "a" / (splits_a[i].first + ".jsonl"), *splits_a[i].second);
    write_jsonl(dir / "b" / (splits_a[i].first + ".jsonl"), *splits_b[i]);
    corpora = corpora && slurp(dir / "a" / (splits_a[i].first + ".jsonl")) ==
                             slurp(dir / "b" / (splits_a[i].first + ".jsonl"));
  }

  // Retrain one configuration and compare the logs and the selected weights.
  const RunResult& first = ex.get(Method::kVib, kSeeds.front());
  const RunResult repeat = run_one(ex, Method::kVib, kSeeds.front());
  write_log_csv(dir / "log_a.csv", first.trained.log);
  write_log_csv(dir / "log_b.csv", repeat.trained.log);
  const bool logs = first.trained.log == repeat.trained.log &&
                    slurp(dir / "log_a.csv") == slurp(dir / "log_b.csv") &&
                    same_bits(first.trained.model, repeat.trained.model);

  // Checkpoint round trip.
  const auto ck_path = dir / "vib_seed1.json";
  save_checkpoint(ck_path, model_checkpoint(first.trained.model, Method::kVib, ex.vocab));
  const Checkpoint loaded = load_checkpoint(ck_path);
  const auto id = predict(loaded.model, loaded.vocab, ex.corpus.test_id, Method::kVib, ex.config.eval_batch_size);
  const auto ood = predict(loaded.model, loaded.vocab, ex.corpus.test_ood, Method::kVib, ex.config.eval_batch_size);
  const bool checkpoint = micro_f1(id) == first.gap.id && micro_f1(ood) == first.gap.ood && id == first.id &&
                          ood == first.ood;
  std::filesystem::remove_all(dir);

  Outcome o;
  o.pass = corpora && logs && checkpoint;
  o.detail = std::string("byte-identical corpora: ") + (corpora ? "yes" : "no") +
             "; identical training log and weights on retrain: " + (logs ? "yes" : "no") +
             " (" + std::to_string(first.trained.log.size()) + " rows)" +
             "; checkpoint round trip preserves ID/OOD scores exactly: " + (checkpoint ? "yes" : "no");
  return o;
}

// ---------------------------------------------------------------------------
// 6. Micro-F1 against a confusion-matrix oracle.

Outcome micro_f1_oracle() {
  const auto& labels = relation_labels();
  const std::size_t k = labels.size();
  const std::size_t neg = relation_index(kNoRelation);
  Rng rng(66);
  std::size_t mismatches = 0;
  for (int set = 0; set < 1000; ++set) {
    const std::size_t n = 1 + rng.index(300);
    std::vector<PredictionRecord> records(n);
    std::vector<std::vector<std::size_t>> cm(k, std::vector<std::size_t>(k, 0));
    for (auto& r : records) {
      const std::size_t g = rng.bernoulli(0.3) ? neg : rng.index(k);
      const std::size_t p = rng.bernoulli(0.5) ? g : rng.index(k);
      r.gold = labels[g];
      r.predicted = labels[p];
      ++cm[g][p];
    }
    std::size_t tp = 0, pred_pos = 0, gold_pos = 0;
    for (std::size_t g = 0; g < k; ++g) {
      for (std::size_t p = 0; p < k; ++p) {
        if (g == p && g != neg) tp += cm[g][p];
        if (p != neg) pred_pos += cm[g][p];
        if (g != neg) gold_pos += cm[g][p];
      }
    }
    const double prec = pred_pos ? static_cast<double>(tp) / static_cast<double>(pred_pos) : 0.0;
    const double rec = gold_pos ? static_cast<double>(tp) / static_cast<double>(gold_pos) : 0.0;
    const double oracle = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    if (micro_f1(records) != oracle) ++mismatches;
  }
  Outcome o;
  o.pass = mismatches == 0;
  o.detail = std::to_string(mismatches) + " mismatches over 1000 random prediction sets";
  return o;
}

}  // namespace

int main() {
  configure_allocator();
  const auto t_start = Clock::now();
  std::map<int, std::pair<std::string, Outcome>> results;
  auto report = [&](int id, const std::string& name, const Outcome& o) {
    results[id] = {name, o};
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  };
  auto guarded = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    try {
      report(id, name, fn());
    } catch (const std::exception& e) {
      report(id, name, Outcome{false, std::string("exception: ") + e.what()});
    }
  };

  Experiment ex;
  ex.config.train.epochs = kEpochs;
  ex.config.seeds = kSeeds;
  ex.lexicon = build_lexicon(ex.config);
  ex.corpus = build_corpus(ex.config, ex.lexicon);
  ex.vocab = Vocabulary::build(ex.corpus.train);

  guarded(1, "gradient correctness", [&] { return gradient_correctness(ex.corpus); });
  guarded(2, "KL oracle", kl_oracle);
  guarded(3, "blending identities", [&] { return blending_identities(ex.corpus, ex.vocab, ex.config.model); });
  guarded(6, "micro-F1 oracle", micro_f1_oracle);

  bool trained = false;
  try {
    const auto t0 = Clock::now();
    for (auto seed : kSeeds) {
      for (Method m : {Method::kVanilla, Method::kEntityMask, Method::kVib}) {
        ex.runs.push_back(run_one(ex, m, seed));
        std::printf("  trained %s seed %llu in %.1f s\n", std::string(method_name(m)).c_str(),
                    static_cast<unsigned long long>(seed), ex.runs.back().seconds);
        std::fflush(stdout);
      }
    }
    ex.seconds = seconds_since(t0);
    print_table(ex);
    trained = true;
  } catch (const std::exception& e) {
    std::printf("  experiment aborted: %s\n", e.what());
  }
  auto needs_runs = [&](const std::function<Outcome(const Experiment&)>& fn) {
    return [&, fn] { return trained ? fn(ex) : Outcome{false, "experiment did not complete"}; };
  };
  guarded(4, "desk-scale bias mitigation", needs_runs(bias_mitigation));
  guarded(5, "baseline ordering", needs_runs(baseline_ordering));
  guarded(7, "variance analysis coherence", needs_runs(variance_coherence));
  guarded(8, "determinism and persistence", needs_runs(determinism));

  std::size_t passed = 0;
  std::printf("\nsummary (%.1f min):\n", seconds_since(t_start) / 60.0);
  for (const auto& [id, entry] : results) {
    std::printf("  %s criterion %d: %s\n", entry.second.pass ? "PASS" : "FAIL", id, entry.first.c_str());
    passed += entry.second.pass;
  }
  std::printf("%zu/%zu criteria passed\n", passed, results.size());
  return passed == results.size() ? 0 : 1;
}
