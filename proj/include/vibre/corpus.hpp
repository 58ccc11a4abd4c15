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

#ifndef VIBRE_CORPUS_HPP_
#define VIBRE_CORPUS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vibre/rng.hpp"

namespace vibre {

/// Malformed example or dataset file.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The generator configuration cannot produce a valid corpus.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An entity replacement pool is missing or empty.
class ReplacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EntityType { kPerson, kOrg, kGpe, kDate, kTitle, kMoney, kUniv };

inline constexpr std::size_t kEntityTypeCount = 7;

/// All types in declaration order.
std::span<const EntityType> all_entity_types();

/// "PERSON", "ORG", ... as used in dataset files.
std::string_view type_name(EntityType type);
EntityType parse_entity_type(std::string_view name);

/// Lower-case slug used in relation names and generic tokens ("pers", "org", ...).
std::string_view type_slug(EntityType type);

/// "[subj-person]" / "[obj-org]" style placeholder for the entity-mask baseline.
std::string generic_type_token(EntityType type, bool subject);

inline constexpr std::string_view kNoRelation = "no_relation";

/// The fixed label set: no_relation first, then the eight content relations.
const std::vector<std::string>& relation_labels();
std::size_t relation_index(std::string_view label);

/// Argument types implied by a content relation's name, e.g.
/// "org:gpe:headquartered_in" -> (ORG, GPE).
std::pair<EntityType, EntityType> relation_argument_types(std::string_view label);

/// Inclusive token span.
struct Span {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t length() const { return last - first + 1; }
  bool overlaps(const Span& o) const { return first <= o.last && o.first <= last; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct Example {
  std::string id;
  std::vector<std::string> tokens;
  Span subj;
  Span obj;
  EntityType subj_type = EntityType::kPerson;
  EntityType obj_type = EntityType::kOrg;
  std::string relation;

  std::vector<std::string> subj_tokens() const;
  std::vector<std::string> obj_tokens() const;
  std::string subj_text() const;
  std::string obj_text() const;

  friend bool operator==(const Example&, const Example&) = default;
};

/// Throws DataError unless spans are in range and disjoint and the relation
/// belongs to the label set.
void validate_example(const Example& ex);

std::string to_jsonl_line(const Example& ex);
Example parse_jsonl_line(std::string_view line);
void write_jsonl(const std::filesystem::path& path, std::span<const Example> examples);
std::vector<Example> read_jsonl(const std::filesystem::path& path);

/// Per-type name pools. Pool A feeds training and in-domain data; pool B is
/// reserved for out-of-domain replacement. Names are space-separated tokens.
struct EntityLexicon {
  std::map<EntityType, std::vector<std::string>> pool_a;
  std::map<EntityType, std::vector<std::string>> pool_b;

  /// Programmatic pools of the given size per type; deterministic in seed.
  static EntityLexicon generate(std::uint64_t seed, std::size_t pool_size);

  /// Throws GenerationError on empty names or on A/B overlap within a type.
  void validate() const;
};

/// One context pattern. text holds whitespace-separated tokens with exactly
/// one "{subj}" and one "{obj}" placeholder.
struct Template {
  std::string relation;
  EntityType subj_type = EntityType::kPerson;
  EntityType obj_type = EntityType::kOrg;
  std::string text;
  double weight = 1.0;
};

/// Controls the entity-relation shortcut planted in the corpus.
struct BiasSpec {
  double rho = 0.9;              // chance a slot is filled by a relation-tied entity
  double biased_fraction = 0.4;  // share of pool A entities tied to a relation
  double no_relation_rate = 0.25;
  double filler_rate = 0.3;      // chance of a relation-neutral prefix / suffix each
  std::size_t pool_size = 60;    // names per type per pool when generated
  std::uint64_t seed = 13;
  std::vector<Template> templates;
  std::vector<std::string> prefixes;
  std::vector<std::string> suffixes;
  // Generated long tail: every content relation also gets tail_templates rare
  // phrasings, each a tail frame with a fresh pseudo-verb, together carrying
  // tail_mass of that relation's template weight. Most tail verbs never occur
  // in a given training sample, so these examples leave little context signal.
  std::size_t tail_templates = 375;
  double tail_mass = 0.25;
  std::vector<std::string> tail_frames;  // "{subj}", "{obj}" and one "{verb}" each

  static BiasSpec defaults();
  void validate() const;

  /// templates followed by the generated tail; deterministic in seed.
  std::vector<Template> all_templates() const;
};

struct SplitSizes {
  std::size_t train = 8000;
  std::size_t dev = 1000;
  std::size_t test_id = 1000;
  std::size_t test_ood = 1000;
};

struct Corpus {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test_id;
  std::vector<Example> test_ood;
};

/// Throws GenerationError unless every template, with entities abstracted to
/// typed placeholders, identifies exactly one relation, and every content
/// relation has at least three templates.
void check_context_sufficiency(const BiasSpec& spec);

/// The relation each biased pool-A entity is tied to, keyed by (type, name).
std::map<std::pair<EntityType, std::string>, std::string> biased_entities(
    const BiasSpec& spec, const EntityLexicon& lexicon);

/// Generates train / dev / test_id; test_ood is left empty. test_ood.size()
/// in sizes is honoured by make_ood_testset, which consumes test_id.
Corpus generate_corpus(const BiasSpec& spec, const EntityLexicon& lexicon, const SplitSizes& sizes);

/// Replaces each subject and object by a uniformly drawn same-type name from
/// pool B, re-indexing spans. Context tokens and labels are untouched.
std::vector<Example> make_ood_testset(std::span<const Example> test_id, const EntityLexicon& lexicon,
                                      std::uint64_t seed);

/// Replaces subject and object spans by single generic type tokens.
Example apply_entity_mask_baseline(const Example& ex);

/// Replaces subject and object by random same-type names from pool A.
Example apply_entity_substitution_baseline(const Example& ex, const EntityLexicon& lexicon,
                                           Rng& rng);

/// Swaps entity surfaces, keeping everything else; spans are re-indexed.
Example replace_entities(const Example& ex, const std::vector<std::string>& subj_tokens,
                         const std::vector<std::string>& obj_tokens);

std::vector<std::string> split_tokens(std::string_view text);

}  // namespace vibre

#endif  // VIBRE_CORPUS_HPP_
