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

#include "vibre/training.hpp"

#include <cmath>
#include <numeric>

#include "vibre/evaluation.hpp"
#include "vibre/io.hpp"

namespace vibre {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(beta >= 0.0 && beta <= 1.0)) fail("beta must lie in [0, 1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"method", method_name(c.method)},
          {"beta", c.beta},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"patience", c.patience},
          {"seed", c.seed},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "method") c.method = parse_method(value.get<std::string>());
    else if (key == "beta") c.beta = value.get<double>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "patience") c.patience = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
    else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
    else if (key == "adam_eps") c.adam_eps = value.get<double>();
    else throw std::invalid_argument("train config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

LossTerms total_loss(const Tensor& logits, std::span<const std::size_t> gold, const Tensor& mu,
                     const Tensor& sigma, const EntityMask& mask, std::size_t batch) {
  LossTerms t;
  const Tensor ce = softmax_cross_entropy(logits, gold);
  t.ce = ce.item();
  if (!std::isfinite(t.ce)) throw DivergenceError("cross-entropy is not finite");
  if (!mu.defined()) {
    t.loss = ce;
    return t;
  }
  const Tensor vib = vib_loss(mu, sigma, mask, batch);
  t.vib = vib.item();
  if (!std::isfinite(t.vib)) throw DivergenceError("VIB loss is not finite");
  t.alpha = t.ce / (t.vib + kAlphaGuard);
  t.loss = add(ce, scale(vib, t.alpha));
  return t;
}

OptimizerState OptimizerState::init(std::span<const Tensor> params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor> params, OptimizerState& state, const TrainConfig& config) {
  if (state.m.size() != params.size()) {
    throw ContractError("optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                        std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.adam_beta1, t);
  const double c2 = 1.0 - std::pow(config.adam_beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (state.m[i].size() != p.numel()) throw ContractError("optimizer moment shape mismatch");
    if (!p.has_grad()) p.zero_grad();
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = config.adam_beta1 * m[k] + (1.0 - config.adam_beta1) * g[k];
      v[k] = config.adam_beta2 * v[k] + (1.0 - config.adam_beta2) * g[k] * g[k];
      w[k] -= config.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.adam_eps);
    }
  }
}

void write_log_csv(const std::filesystem::path& path, std::span<const LogRow> rows) {
  auto out = open_output(path);
  out << kLogHeader << '\n';
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.batch << ',' << format_number(r.ce) << ',' << format_number(r.vib) << ','
        << format_number(r.alpha) << ',' << (r.dev_micro_f1 ? format_number(*r.dev_micro_f1) : "") << '\n';
  }
  finish_output(out, path);
}

ModelConfig model_config_for(const ModelConfig& base, const TrainConfig& config) {
  ModelConfig c = base;
  c.use_vib = config.method == Method::kVib;
  c.beta = config.beta;
  c.seed = config.seed;
  return c;
}

TrainProgress start_training(const ModelConfig& model_config, const TrainConfig& config,
                             std::size_t vocab_size) {
  config.validate();
  TrainProgress p;
  p.model = ModelState::init(model_config_for(model_config, config), vocab_size);
  p.optimizer = OptimizerState::init(p.model.parameters());
  p.best = p.model.clone();
  return p;
}

namespace {

constexpr std::uint64_t kShuffleStream = 0xE0;
constexpr std::uint64_t kSubstituteStream = 0x5B;
constexpr std::uint64_t kBatchStream = 0xBA;

std::vector<MarkedExample> mark_all(std::span<const Example> examples, const Vocabulary& vocab,
                                    std::size_t max_length) {
  std::vector<MarkedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(mark_entities(ex, vocab, max_length));
  return out;
}

}  // namespace

void train(TrainProgress& progress, const TrainConfig& config, const TrainInputs& inputs,
           const EpochCallback& on_epoch_end) {
  config.validate();
  if (inputs.vocab == nullptr) throw ContractError("train: vocabulary missing");
  if (config.epochs > 0 && (inputs.train.empty() || inputs.dev.empty())) {
    throw ContractError("train: train and dev splits must be nonempty");
  }
  if (config.method == Method::kEntitySubstitution && inputs.lexicon == nullptr) {
    throw ContractError("train: entity substitution needs the entity lexicon");
  }
  const Vocabulary& vocab = *inputs.vocab;
  const std::size_t max_len = progress.model.config.max_sequence_length;

  std::vector<MarkedExample> fixed;
  if (config.method != Method::kEntitySubstitution && progress.epochs_done < config.epochs) {
    std::vector<Example> view;
    view.reserve(inputs.train.size());
    for (const auto& ex : inputs.train) view.push_back(inference_view(ex, config.method));
    fixed = mark_all(view, vocab, max_len);
  }

  std::vector<Tensor> params = progress.model.parameters();
  while (!progress.stopped && progress.epochs_done < config.epochs) {
    const std::size_t epoch = progress.epochs_done;
    std::vector<MarkedExample> substituted;
    if (config.method == Method::kEntitySubstitution) {
      Rng sub_rng(derive_seed(config.seed, {kSubstituteStream, epoch}));
      std::vector<Example> view;
      view.reserve(inputs.train.size());
      for (const auto& ex : inputs.train) {
        view.push_back(apply_entity_substitution_baseline(ex, *inputs.lexicon, sub_rng));
      }
      substituted = mark_all(view, vocab, max_len);
    }
    const auto& data = config.method == Method::kEntitySubstitution ? substituted : fixed;

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(derive_seed(config.seed, {kShuffleStream, epoch}));
    order_rng.shuffle(order);

    const std::size_t n_batches = (order.size() + config.batch_size - 1) / config.batch_size;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<MarkedExample> members;
      for (std::size_t i = b * config.batch_size; i < std::min(order.size(), (b + 1) * config.batch_size); ++i) {
        members.push_back(data[order[i]]);
      }
      const Batch batch = make_batch(members);
      Rng rng(derive_seed(config.seed, {kBatchStream, epoch, b}));
      EncodeOptions opts;
      opts.mode = Mode::kTrain;
      opts.rng = &rng;

      Tape tape;
      for (auto& p : params) p.zero_grad();
      LossTerms terms;
      try {
        const ForwardResult fr = forward(progress.model, batch, opts);
        terms = total_loss(fr.logits, batch.labels, fr.encoded.mu, fr.encoded.sigma, batch.mask, batch.size);
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) + " batch " +
                              std::to_string(b + 1) + ": " + e.what());
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) + " batch " +
                              std::to_string(b + 1) + ": " + e.what());
      }
      tape.backward(terms.loss);
      adam_step(params, progress.optimizer, config);
      progress.log.push_back(LogRow{epoch + 1, b + 1, terms.ce, terms.vib, terms.alpha, std::nullopt});
    }

    const double dev = micro_f1(predict(progress.model, vocab, inputs.dev, config.method));
    if (!progress.log.empty()) progress.log.back().dev_micro_f1 = dev;
    progress.epochs_done = epoch + 1;
    if (dev > progress.best_dev) {
      progress.best = progress.model.clone();
      progress.best_dev = dev;
      progress.best_epoch = epoch + 1;
      progress.since_best = 0;
    } else {
      ++progress.since_best;
    }
    if (config.patience > 0 && progress.since_best >= config.patience) progress.stopped = true;
    if (on_epoch_end) on_epoch_end(progress);
  }
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& config, const TrainInputs& inputs) {
  if (inputs.vocab == nullptr) throw ContractError("train: vocabulary missing");
  TrainProgress progress = start_training(model_config, config, inputs.vocab->size());
  train(progress, config, inputs);
  return TrainResult{progress.best, progress.log, progress.best_dev};
}

namespace {

nlohmann::json log_to_json(std::span<const LogRow> rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({r.epoch, r.batch, r.ce, r.vib, r.alpha,
                   r.dev_micro_f1 ? nlohmann::json(*r.dev_micro_f1) : nlohmann::json(nullptr)});
  }
  return arr;
}

std::vector<LogRow> log_from_json(const nlohmann::json& arr) {
  std::vector<LogRow> rows;
  for (const auto& r : arr) {
    LogRow row{r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>(), r.at(2).get<double>(),
               r.at(3).get<double>(), r.at(4).get<double>(), std::nullopt};
    if (!r.at(5).is_null()) row.dev_micro_f1 = r.at(5).get<double>();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

Checkpoint progress_to_checkpoint(const TrainProgress& progress, const TrainConfig& config,
                                  const Vocabulary& vocab) {
  Checkpoint c;
  c.method = std::string(method_name(config.method));
  c.relations = relation_labels();
  c.vocab = vocab;
  c.model = progress.model;
  const auto named = progress.model.named_parameters();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& name = named[i].first;
    c.extra_tensors.emplace_back("adam.m." + name, Tensor({progress.optimizer.m[i].size()}, progress.optimizer.m[i]));
    c.extra_tensors.emplace_back("adam.v." + name, Tensor({progress.optimizer.v[i].size()}, progress.optimizer.v[i]));
  }
  for (const auto& [name, t] : progress.best.named_parameters()) c.extra_tensors.emplace_back("best." + name, t);
  c.extra = {{"kind", "progress"},
             {"train_config", train_config_to_json(config)},
             {"step", progress.optimizer.step},
             {"best_dev", progress.best_dev},
             {"best_epoch", progress.best_epoch},
             {"epochs_done", progress.epochs_done},
             {"since_best", progress.since_best},
             {"stopped", progress.stopped},
             {"log", log_to_json(progress.log)}};
  return c;
}

TrainProgress progress_from_checkpoint(const Checkpoint& c, TrainConfig* config) {
  if (!c.extra.is_object() || c.extra.value("kind", "") != "progress") {
    throw CheckpointError("checkpoint does not hold resumable training state");
  }
  try {
    TrainProgress p;
    p.model = c.model;
    p.best = c.model.clone();
    std::unordered_map<std::string, const Tensor*> extra;
    for (const auto& [name, t] : c.extra_tensors) extra[name] = &t;
    auto find = [&](const std::string& name, std::size_t numel) -> const Tensor& {
      const auto it = extra.find(name);
      if (it == extra.end()) throw CheckpointError("resume state lacks tensor '" + name + "'");
      if (it->second->numel() != numel) throw CheckpointError("resume tensor '" + name + "' has the wrong size");
      return *it->second;
    };
    for (const auto& [name, t] : c.model.named_parameters()) {
      const auto m = find("adam.m." + name, t.numel()).data();
      const auto v = find("adam.v." + name, t.numel()).data();
      p.optimizer.m.emplace_back(m.begin(), m.end());
      p.optimizer.v.emplace_back(v.begin(), v.end());
    }
    for (auto& [name, t] : p.best.named_parameters()) {
      const auto src = find("best." + name, t.numel()).data();
      std::copy(src.begin(), src.end(), t.mutable_data().begin());
    }
    const auto& x = c.extra;
    p.optimizer.step = x.at("step").get<std::uint64_t>();
    p.best_dev = x.at("best_dev").get<double>();
    p.best_epoch = x.at("best_epoch").get<std::size_t>();
    p.epochs_done = x.at("epochs_done").get<std::size_t>();
    p.since_best = x.at("since_best").get<std::size_t>();
    p.stopped = x.at("stopped").get<bool>();
    p.log = log_from_json(x.at("log"));
    if (config) *config = train_config_from_json(x.at("train_config"));
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed resume state: ") + e.what());
  }
}

Checkpoint model_checkpoint(const ModelState& model, Method method, const Vocabulary& vocab) {
  Checkpoint c;
  c.method = std::string(method_name(method));
  c.relations = relation_labels();
  c.vocab = vocab;
  c.model = model;
  c.extra = {{"kind", "model"}};
  return c;
}

}  // namespace vibre
