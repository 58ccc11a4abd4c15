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

#ifndef VIBRE_TRAINING_HPP_
#define VIBRE_TRAINING_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vibre/corpus.hpp"
#include "vibre/method.hpp"
#include "vibre/model.hpp"
#include "vibre/tensor.hpp"
#include "vibre/vib.hpp"

namespace vibre {

/// A loss term became NaN or infinite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Method method = Method::kVanilla;
  double beta = 0.5;  // vib only
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::size_t patience = 5;  // epochs without dev improvement; 0 disables
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

inline constexpr double kAlphaGuard = 1e-8;

struct LossTerms {
  Tensor loss;
  double ce = 0.0;
  double vib = 0.0;
  double alpha = 0.0;
};

/// loss = CE + alpha * VIB with alpha = CE / (VIB + 1e-8) taken from detached
/// values, so alpha carries no gradient. With mu undefined the loss is CE
/// alone and alpha is reported as 0. Throws DivergenceError on NaN terms.
LossTerms total_loss(const Tensor& logits, std::span<const std::size_t> gold, const Tensor& mu,
                     const Tensor& sigma, const EntityMask& mask, std::size_t batch);

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  static OptimizerState init(std::span<const Tensor> params);
};

/// One bias-corrected Adam update from the parameters' accumulated
/// gradients; a parameter without a gradient is treated as zero-gradient.
void adam_step(std::span<Tensor> params, OptimizerState& state, const TrainConfig& config);

struct LogRow {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double ce = 0.0;
  double vib = 0.0;
  double alpha = 0.0;
  std::optional<double> dev_micro_f1;  // set on the last batch of each epoch

  friend bool operator==(const LogRow&, const LogRow&) = default;
};

inline constexpr std::string_view kLogHeader = "epoch,batch,ce,vib,alpha,dev_micro_f1";

void write_log_csv(const std::filesystem::path& path, std::span<const LogRow> rows);

/// Complete training state; enough to resume bit-exactly after any epoch.
struct TrainProgress {
  ModelState model;
  OptimizerState optimizer;
  ModelState best;
  double best_dev = -1.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_done = 0;
  std::size_t since_best = 0;
  bool stopped = false;
  std::vector<LogRow> log;
};

struct TrainInputs {
  const Vocabulary* vocab = nullptr;
  std::span<const Example> train;
  std::span<const Example> dev;
  const EntityLexicon* lexicon = nullptr;  // entity substitution only
};

/// Model config actually used for a training config (vib switch and beta).
ModelConfig model_config_for(const ModelConfig& base, const TrainConfig& config);

/// Fresh progress for a run: initialised model, zero moments.
TrainProgress start_training(const ModelConfig& model_config, const TrainConfig& config,
                             std::size_t vocab_size);

using EpochCallback = std::function<void(const TrainProgress&)>;

/// Runs the remaining epochs of progress: seeded shuffles, the method's input
/// transform, dev Micro-F1 after every epoch, best-dev tracking and early
/// stopping. Every shuffle, dropout mask and noise draw is derived from
/// (seed, epoch, batch), so a resumed run repeats an uninterrupted one.
void train(TrainProgress& progress, const TrainConfig& config, const TrainInputs& inputs,
           const EpochCallback& on_epoch_end = {});

/// Convenience wrapper returning the best-dev model and the log.
struct TrainResult {
  ModelState model;
  std::vector<LogRow> log;
  double best_dev = -1.0;
};
TrainResult train(const ModelConfig& model_config, const TrainConfig& config, const TrainInputs& inputs);

/// Resumable checkpoint: the current model in the main slot, optimiser
/// moments and best model as extra tensors, counters and log in extra.
Checkpoint progress_to_checkpoint(const TrainProgress& progress, const TrainConfig& config,
                                  const Vocabulary& vocab);
TrainProgress progress_from_checkpoint(const Checkpoint& checkpoint, TrainConfig* config = nullptr);

/// Final checkpoint holding only the best model.
Checkpoint model_checkpoint(const ModelState& model, Method method, const Vocabulary& vocab);

}  // namespace vibre

#endif  // VIBRE_TRAINING_HPP_
