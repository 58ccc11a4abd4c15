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

#ifndef VIBRE_CONFIG_HPP_
#define VIBRE_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vibre/corpus.hpp"
#include "vibre/method.hpp"
#include "vibre/model.hpp"
#include "vibre/training.hpp"

namespace vibre {

/// Invalid or unknown configuration entry; the message names the key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One experiment: corpus generation, model, training and analysis settings.
struct RunConfig {
  std::filesystem::path out_dir = "runs/default";
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<Method> methods = {Method::kVanilla, Method::kEntityMask, Method::kEntitySubstitution,
                                 Method::kVib};
  BiasSpec corpus = BiasSpec::defaults();
  SplitSizes sizes;
  ModelConfig model;
  TrainConfig train;
  std::size_t attribution_samples = 8;
  std::size_t eval_batch_size = 64;

  void validate() const;
};

/// Keys mirror the struct layout; see configs/default.json.
nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

EntityLexicon build_lexicon(const RunConfig& config);

/// All four splits; test_ood rewrites the first sizes.test_ood test_id
/// examples with pool B entities.
Corpus build_corpus(const RunConfig& config, const EntityLexicon& lexicon);

/// The run's training settings for one (method, seed) pair.
TrainConfig train_config_for(const RunConfig& config, Method method, std::uint64_t seed);

/// Applies "section.key=value" with value parsed as JSON (falling back to a
/// plain string), then re-validates.
void apply_override(nlohmann::json& config_json, const std::string& assignment);

}  // namespace vibre

#endif  // VIBRE_CONFIG_HPP_
