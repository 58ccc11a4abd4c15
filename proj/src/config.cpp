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

#include "vibre/config.hpp"

#include "vibre/io.hpp"

namespace vibre {

namespace {

template <typename T>
T get(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + j.dump());
  }
}

void reject_unknown(const nlohmann::json& j, const std::string& section,
                    std::initializer_list<std::string_view> known) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

nlohmann::json templates_to_json(const std::vector<Template>& templates) {
  auto arr = nlohmann::json::array();
  for (const auto& t : templates) {
    arr.push_back({{"relation", t.relation},
                   {"subj_type", type_name(t.subj_type)},
                   {"obj_type", type_name(t.obj_type)},
                   {"text", t.text},
                   {"weight", t.weight}});
  }
  return arr;
}

std::vector<Template> templates_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw ConfigError("config key 'corpus.templates' must be an array");
  std::vector<Template> out;
  for (const auto& j : arr) {
    reject_unknown(j, "corpus.templates[]", {"relation", "subj_type", "obj_type", "text", "weight"});
    Template t;
    try {
      t.relation = j.at("relation").get<std::string>();
      t.subj_type = parse_entity_type(j.at("subj_type").get<std::string>());
      t.obj_type = parse_entity_type(j.at("obj_type").get<std::string>());
      t.text = j.at("text").get<std::string>();
      if (j.contains("weight")) t.weight = j.at("weight").get<double>();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config key 'corpus.templates': ") + e.what());
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("config key 'seeds' must not be empty");
  if (methods.empty()) throw ConfigError("config key 'methods' must not be empty");
  if (sizes.train == 0 || sizes.dev == 0 || sizes.test_id == 0 || sizes.test_ood == 0) {
    throw ConfigError("config key 'corpus.sizes' entries must be positive");
  }
  if (sizes.test_ood > sizes.test_id) {
    throw ConfigError("config key 'corpus.sizes.test_ood' may not exceed corpus.sizes.test_id");
  }
  if (model.n_relations != relation_labels().size()) {
    throw ConfigError("config key 'model.n_relations' must be " + std::to_string(relation_labels().size()));
  }
  if (eval_batch_size == 0) throw ConfigError("config key 'eval_batch_size' must be positive");
  try {
    corpus.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config section 'corpus': ") + e.what());
  }
  try {
    model.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config section 'model': ") + e.what());
  }
  try {
    train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config section 'train': ") + e.what());
  }
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json methods = nlohmann::json::array();
  for (Method m : c.methods) methods.push_back(method_name(m));
  nlohmann::json model = config_to_json(c.model);
  model.erase("use_vib");
  model.erase("beta");
  model.erase("seed");
  nlohmann::json train = train_config_to_json(c.train);
  train.erase("method");
  train.erase("seed");
  return {{"out_dir", c.out_dir.string()},
          {"seeds", c.seeds},
          {"methods", methods},
          {"corpus",
           {{"rho", c.corpus.rho},
            {"biased_fraction", c.corpus.biased_fraction},
            {"no_relation_rate", c.corpus.no_relation_rate},
            {"filler_rate", c.corpus.filler_rate},
            {"pool_size", c.corpus.pool_size},
            {"seed", c.corpus.seed},
            {"templates", templates_to_json(c.corpus.templates)},
            {"prefixes", c.corpus.prefixes},
            {"suffixes", c.corpus.suffixes},
            {"tail_templates", c.corpus.tail_templates},
            {"tail_mass", c.corpus.tail_mass},
            {"tail_frames", c.corpus.tail_frames},
            {"sizes",
             {{"train", c.sizes.train}, {"dev", c.sizes.dev}, {"test_id", c.sizes.test_id},
              {"test_ood", c.sizes.test_ood}}}}},
          {"model", model},
          {"train", train},
          {"attribution_samples", c.attribution_samples},
          {"eval_batch_size", c.eval_batch_size}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  reject_unknown(j, "", {"out_dir", "seeds", "methods", "corpus", "model", "train", "attribution_samples",
                         "eval_batch_size"});
  if (j.contains("out_dir")) c.out_dir = get<std::string>(j["out_dir"], "out_dir");
  if (j.contains("seeds")) c.seeds = get<std::vector<std::uint64_t>>(j["seeds"], "seeds");
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j["methods"]) {
      try {
        c.methods.push_back(parse_method(get<std::string>(m, "methods")));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config key 'methods': ") + e.what());
      }
    }
  }
  if (j.contains("attribution_samples")) {
    c.attribution_samples = get<std::size_t>(j["attribution_samples"], "attribution_samples");
  }
  if (j.contains("eval_batch_size")) c.eval_batch_size = get<std::size_t>(j["eval_batch_size"], "eval_batch_size");
  if (j.contains("corpus")) {
    const auto& s = j["corpus"];
    reject_unknown(s, "corpus", {"rho", "biased_fraction", "no_relation_rate", "filler_rate", "pool_size", "seed",
                                 "templates", "prefixes", "suffixes", "tail_templates", "tail_mass",
                                 "tail_frames", "sizes"});
    if (s.contains("templates")) c.corpus.templates = templates_from_json(s["templates"]);
    if (s.contains("prefixes")) c.corpus.prefixes = get<std::vector<std::string>>(s["prefixes"], "corpus.prefixes");
    if (s.contains("suffixes")) c.corpus.suffixes = get<std::vector<std::string>>(s["suffixes"], "corpus.suffixes");
    if (s.contains("tail_templates")) c.corpus.tail_templates = get<std::size_t>(s["tail_templates"], "corpus.tail_templates");
    if (s.contains("tail_mass")) c.corpus.tail_mass = get<double>(s["tail_mass"], "corpus.tail_mass");
    if (s.contains("tail_frames")) c.corpus.tail_frames = get<std::vector<std::string>>(s["tail_frames"], "corpus.tail_frames");
    if (s.contains("rho")) c.corpus.rho = get<double>(s["rho"], "corpus.rho");
    if (s.contains("biased_fraction")) c.corpus.biased_fraction = get<double>(s["biased_fraction"], "corpus.biased_fraction");
    if (s.contains("no_relation_rate")) c.corpus.no_relation_rate = get<double>(s["no_relation_rate"], "corpus.no_relation_rate");
    if (s.contains("filler_rate")) c.corpus.filler_rate = get<double>(s["filler_rate"], "corpus.filler_rate");
    if (s.contains("pool_size")) c.corpus.pool_size = get<std::size_t>(s["pool_size"], "corpus.pool_size");
    if (s.contains("seed")) c.corpus.seed = get<std::uint64_t>(s["seed"], "corpus.seed");
    if (s.contains("sizes")) {
      const auto& z = s["sizes"];
      reject_unknown(z, "corpus.sizes", {"train", "dev", "test_id", "test_ood"});
      if (z.contains("train")) c.sizes.train = get<std::size_t>(z["train"], "corpus.sizes.train");
      if (z.contains("dev")) c.sizes.dev = get<std::size_t>(z["dev"], "corpus.sizes.dev");
      if (z.contains("test_id")) c.sizes.test_id = get<std::size_t>(z["test_id"], "corpus.sizes.test_id");
      if (z.contains("test_ood")) c.sizes.test_ood = get<std::size_t>(z["test_ood"], "corpus.sizes.test_ood");
    }
  }
  if (j.contains("model")) {
    nlohmann::json m = j["model"];
    reject_unknown(m, "model", {"d_model", "n_layers", "n_heads", "ffn_width", "max_sequence_length", "n_relations",
                                "dropout"});
    try {
      const ModelConfig parsed = config_from_json(m);
      c.model = parsed;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config section 'model': ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config section 'model': ") + e.what());
    }
  }
  if (j.contains("train")) {
    nlohmann::json t = j["train"];
    reject_unknown(t, "train", {"beta", "learning_rate", "epochs", "batch_size", "patience", "adam_beta1",
                                "adam_beta2", "adam_eps"});
    try {
      c.train = train_config_from_json(t);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config section 'train': ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config section 'train': ") + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

EntityLexicon build_lexicon(const RunConfig& config) {
  return EntityLexicon::generate(config.corpus.seed, config.corpus.pool_size);
}

Corpus build_corpus(const RunConfig& config, const EntityLexicon& lexicon) {
  Corpus c = generate_corpus(config.corpus, lexicon, config.sizes);
  c.test_ood = make_ood_testset(std::span<const Example>(c.test_id).first(config.sizes.test_ood), lexicon,
                                config.corpus.seed);
  return c;
}

TrainConfig train_config_for(const RunConfig& config, Method method, std::uint64_t seed) {
  TrainConfig t = config.train;
  t.method = method;
  t.seed = seed;
  return t;
}

void apply_override(nlohmann::json& config_json, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &config_json;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace vibre
