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

#include "vibre/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace vibre {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::array<EntityType, kEntityTypeCount> kTypes = {
    EntityType::kPerson, EntityType::kOrg,   EntityType::kGpe,  EntityType::kDate,
    EntityType::kTitle,  EntityType::kMoney, EntityType::kUniv};

constexpr std::array<std::string_view, kEntityTypeCount> kTypeNames = {
    "PERSON", "ORG", "GPE", "DATE", "TITLE", "MONEY", "UNIV"};

constexpr std::array<std::string_view, kEntityTypeCount> kTypeSlugs = {
    "pers", "org", "gpe", "date", "title", "money", "univ"};

// Generic tokens spell PERSON as "person"; the relation slug stays "pers".
constexpr std::array<std::string_view, kEntityTypeCount> kGenericNames = {
    "person", "org", "gpe", "date", "title", "money", "univ"};

std::size_t type_index(EntityType t) { return static_cast<std::size_t>(t); }

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

std::span<const EntityType> all_entity_types() { return kTypes; }

std::string_view type_name(EntityType type) { return kTypeNames[type_index(type)]; }

EntityType parse_entity_type(std::string_view name) {
  for (std::size_t i = 0; i < kTypes.size(); ++i) {
    if (kTypeNames[i] == name) return kTypes[i];
  }
  throw DataError("unknown entity type '" + std::string(name) + "'");
}

std::string_view type_slug(EntityType type) { return kTypeSlugs[type_index(type)]; }

std::string generic_type_token(EntityType type, bool subject) {
  return std::string(subject ? "[subj-" : "[obj-") + std::string(kGenericNames[type_index(type)]) + "]";
}

const std::vector<std::string>& relation_labels() {
  static const std::vector<std::string> labels = {
      std::string(kNoRelation),   "pers:org:employee_of",     "org:date:formed_on",
      "org:gpe:headquartered_in", "org:org:subsidiary_of",    "pers:title:title",
      "org:money:revenue_of",     "org:gpe:operations_in",    "pers:univ:attended"};
  return labels;
}

std::size_t relation_index(std::string_view label) {
  const auto& labels = relation_labels();
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw DataError("unknown relation label '" + std::string(label) + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

std::pair<EntityType, EntityType> relation_argument_types(std::string_view label) {
  const auto first = label.find(':');
  const auto second = first == std::string_view::npos ? first : label.find(':', first + 1);
  if (second == std::string_view::npos) {
    throw GenerationError("relation '" + std::string(label) + "' does not name its argument types");
  }
  auto from_slug = [&](std::string_view slug) {
    for (std::size_t i = 0; i < kTypes.size(); ++i) {
      if (kTypeSlugs[i] == slug) return kTypes[i];
    }
    throw GenerationError("relation '" + std::string(label) + "' uses unknown type slug '" +
                          std::string(slug) + "'");
  };
  return {from_slug(label.substr(0, first)), from_slug(label.substr(first + 1, second - first - 1))};
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> Example::subj_tokens() const {
  return {tokens.begin() + static_cast<std::ptrdiff_t>(subj.first),
          tokens.begin() + static_cast<std::ptrdiff_t>(subj.last) + 1};
}

std::vector<std::string> Example::obj_tokens() const {
  return {tokens.begin() + static_cast<std::ptrdiff_t>(obj.first),
          tokens.begin() + static_cast<std::ptrdiff_t>(obj.last) + 1};
}

std::string Example::subj_text() const { return join(subj_tokens()); }
std::string Example::obj_text() const { return join(obj_tokens()); }

void validate_example(const Example& ex) {
  const std::string where = "example '" + ex.id + "': ";
  if (ex.tokens.empty()) throw DataError(where + "no tokens");
  for (const Span* s : {&ex.subj, &ex.obj}) {
    if (s->first > s->last || s->last >= ex.tokens.size()) {
      throw DataError(where + "span [" + std::to_string(s->first) + "," + std::to_string(s->last) +
                      "] outside " + std::to_string(ex.tokens.size()) + " tokens");
    }
  }
  if (ex.subj.overlaps(ex.obj)) throw DataError(where + "subject and object spans overlap");
  const auto& labels = relation_labels();
  if (std::find(labels.begin(), labels.end(), ex.relation) == labels.end()) {
    throw DataError(where + "unknown relation '" + ex.relation + "'");
  }
}

std::string to_jsonl_line(const Example& ex) {
  ordered_json j;
  j["id"] = ex.id;
  j["tokens"] = ex.tokens;
  j["subj_span"] = {ex.subj.first, ex.subj.last};
  j["obj_span"] = {ex.obj.first, ex.obj.last};
  j["subj_type"] = type_name(ex.subj_type);
  j["obj_type"] = type_name(ex.obj_type);
  j["relation"] = ex.relation;
  return j.dump();
}

Example parse_jsonl_line(std::string_view line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  const std::set<std::string> known = {"id",        "tokens",    "subj_span", "obj_span",
                                       "subj_type", "obj_type",  "relation"};
  for (const auto& key : known) {
    if (!j.contains(key)) throw DataError("example is missing field '" + key + "'");
  }
  Example ex;
  try {
    ex.id = j.at("id").get<std::string>();
    ex.tokens = j.at("tokens").get<std::vector<std::string>>();
    auto span = [&](const char* key) {
      const auto v = j.at(key).get<std::vector<std::size_t>>();
      if (v.size() != 2) throw DataError(std::string("field '") + key + "' must hold two indices");
      return Span{v[0], v[1]};
    };
    ex.subj = span("subj_span");
    ex.obj = span("obj_span");
    ex.subj_type = parse_entity_type(j.at("subj_type").get<std::string>());
    ex.obj_type = parse_entity_type(j.at("obj_type").get<std::string>());
    ex.relation = j.at("relation").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad field type: ") + e.what());
  }
  validate_example(ex);
  return ex;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  for (const auto& ex : examples) out << to_jsonl_line(ex) << '\n';
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

std::vector<Example> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_jsonl_line(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lexicon

namespace {

constexpr std::array<std::string_view, 24> kSyllables = {
    "ka", "lo", "ri", "ven", "tor", "mi", "sa", "del", "bar", "zen", "quo", "fi",
    "na", "ru", "gal", "pe", "dor", "lin", "mar", "tes", "vo", "ny", "cor", "bel"};

constexpr std::array<std::string_view, 20> kFirstNames = {
    "Brenda", "James", "Maria", "Wei",   "Ahmed",  "Olga",  "Carlos", "Priya", "John",  "Aisha",
    "Kenji",  "Laura", "Pedro", "Sofia", "Daniel", "Fatima", "Ivan",  "Grace", "Omar",  "Lena"};

constexpr std::array<std::string_view, 8> kOrgSuffixes = {
    "Holdings", "Group", "Corp", "Inc", "Partners", "Capital", "Systems", "Labs"};

constexpr std::array<std::string_view, 6> kPlacePrefixes = {"New", "Port", "San", "North", "East", "Lake"};

constexpr std::array<std::string_view, 12> kMonths = {
    "January", "February", "March",     "April",   "May",      "June",
    "July",    "August",   "September", "October", "November", "December"};

constexpr std::array<std::string_view, 8> kTitleAdjectives = {
    "senior", "chief", "deputy", "assistant", "executive", "regional", "general", "associate"};

constexpr std::array<std::string_view, 12> kTitleNouns = {
    "director", "officer",   "manager", "president", "analyst",  "counsel",
    "treasurer", "secretary", "editor", "engineer",  "architect", "strategist"};

template <std::size_t N>
std::string pick(const std::array<std::string_view, N>& a, Rng& rng) {
  return std::string(a[rng.index(N)]);
}

std::string pseudo_word(Rng& rng) {
  const std::size_t n = 2 + rng.index(2);
  std::string w;
  for (std::size_t i = 0; i < n; ++i) w += kSyllables[rng.index(kSyllables.size())];
  w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

// Identity words are drawn from disjoint per-pool inventories so that pool B
// names never reuse a pool A identity token; type words are shared.
struct Inventories {
  std::vector<std::string> a, b;
};

Inventories make_inventories(std::size_t per_pool, std::set<std::string>& used, Rng& rng) {
  Inventories inv;
  std::size_t guard = 0;
  while (inv.a.size() < per_pool || inv.b.size() < per_pool) {
    if (++guard > 1000000) throw GenerationError("pseudo-word space exhausted");
    std::string w = pseudo_word(rng);
    if (!used.insert(w).second) continue;
    (inv.a.size() <= inv.b.size() ? inv.a : inv.b).push_back(std::move(w));
  }
  return inv;
}

std::string make_name(EntityType type, const std::vector<std::string>& identity, Rng& rng) {
  const double u = rng.uniform();
  switch (type) {
    case EntityType::kPerson: {
      std::string first = pick(kFirstNames, rng);
      std::string last = rng.pick(identity);
      if (u < 0.2) {
        const char initial = static_cast<char>('A' + rng.index(26));
        return first + " " + std::string(1, initial) + ". " + last;
      }
      return first + " " + last;
    }
    case EntityType::kOrg: {
      if (u < 0.3) return rng.pick(identity);
      if (u < 0.85) return rng.pick(identity) + " " + pick(kOrgSuffixes, rng);
      return rng.pick(identity) + " " + rng.pick(identity) + " " + pick(kOrgSuffixes, rng);
    }
    case EntityType::kGpe:
      if (u < 0.7) return rng.pick(identity);
      return pick(kPlacePrefixes, rng) + " " + rng.pick(identity);
    case EntityType::kDate: {
      const std::string year = std::to_string(1950 + rng.index(71));
      if (u < 0.2) return year;
      if (u < 0.6) return pick(kMonths, rng) + " " + year;
      return std::to_string(1 + rng.index(28)) + " " + pick(kMonths, rng) + " " + year;
    }
    case EntityType::kTitle:
      if (u < 0.2) return pick(kTitleNouns, rng);
      if (u < 0.8) return pick(kTitleAdjectives, rng) + " " + pick(kTitleNouns, rng);
      return pick(kTitleAdjectives, rng) + " " + pick(kTitleAdjectives, rng) + " " +
             pick(kTitleNouns, rng);
    case EntityType::kMoney: {
      const std::string amount = std::to_string(1 + rng.index(999));
      if (u < 0.15) return "$ " + amount;
      return "$ " + amount + (u < 0.7 ? " million" : " billion");
    }
    case EntityType::kUniv:
      if (u < 0.5) return rng.pick(identity) + " University";
      if (u < 0.8) return "University of " + rng.pick(identity);
      return rng.pick(identity) + " Institute";
  }
  throw GenerationError("unhandled entity type");
}

}  // namespace

EntityLexicon EntityLexicon::generate(std::uint64_t seed, std::size_t pool_size) {
  if (pool_size == 0) throw GenerationError("pool_size must be positive");
  EntityLexicon lex;
  std::set<std::string> used_words;
  for (EntityType type : kTypes) {
    Rng rng(derive_seed(seed, {0x1E, type_index(type)}));
    const Inventories inv = make_inventories(pool_size, used_words, rng);
    std::set<std::string> seen;
    auto fill = [&](const std::vector<std::string>& identity, std::vector<std::string>& pool) {
      std::size_t guard = 0;
      while (pool.size() < pool_size) {
        if (++guard > 100000) {
          throw GenerationError("cannot generate " + std::to_string(pool_size) + " distinct " +
                                std::string(type_name(type)) + " names");
        }
        std::string name = make_name(type, identity, rng);
        if (seen.insert(name).second) pool.push_back(std::move(name));
      }
    };
    fill(inv.a, lex.pool_a[type]);
    fill(inv.b, lex.pool_b[type]);
  }
  lex.validate();
  return lex;
}

void EntityLexicon::validate() const {
  for (const auto* pools : {&pool_a, &pool_b}) {
    for (const auto& [type, names] : *pools) {
      for (const auto& n : names) {
        if (split_tokens(n).empty()) {
          throw GenerationError("empty name in " + std::string(type_name(type)) + " pool");
        }
      }
    }
  }
  for (const auto& [type, names] : pool_a) {
    const auto it = pool_b.find(type);
    if (it == pool_b.end()) continue;
    const std::set<std::string> a(names.begin(), names.end());
    for (const auto& n : it->second) {
      if (a.count(n)) {
        throw GenerationError("name '" + n + "' appears in both pools of " +
                              std::string(type_name(type)));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Bias settings

BiasSpec BiasSpec::defaults() {
  using T = EntityType;
  BiasSpec s;
  auto add = [&](std::string rel, T st, T ot, std::string text, double w) {
    s.templates.push_back(Template{std::move(rel), st, ot, std::move(text), w});
  };
  // Content relations: four common phrasings with skewed frequency, then six
  // rare ones.
  const std::vector<double> skew = {3.0, 2.0, 1.5, 1.0, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15};
  auto family = [&](const std::string& rel, const std::vector<std::string>& texts) {
    const auto [st, ot] = relation_argument_types(rel);
    for (std::size_t i = 0; i < texts.size(); ++i) add(rel, st, ot, texts[i], skew[i % skew.size()]);
  };
  family("pers:org:employee_of",
         {"{subj} works for {obj}", "{subj} , an employee of {obj} , said", "{obj} hired {subj} last year",
          "{subj} joined the staff of {obj}", "{obj} employs {subj} as a consultant",
          "{subj} is on the payroll of {obj}", "{subj} draws a salary from {obj}",
          "{obj} spokesperson {subj} said", "{subj} reports to the board of {obj}",
          "{subj} clocked in at {obj}"});
  family("pers:title:title",
         {"{subj} , the {obj} , said", "{subj} was named {obj}", "{obj} {subj} announced the plan",
          "{subj} serves as {obj}", "{subj} took over as {obj}", "{subj} holds the post of {obj}",
          "{subj} was promoted to {obj}", "{subj} stepped in as acting {obj}",
          "{subj} was sworn in as {obj}", "{subj} accepted the role of {obj}"});
  family("pers:univ:attended",
         {"{subj} studied at {obj}", "{subj} graduated from {obj}", "{subj} , an alumnus of {obj} , said",
          "{subj} earned a degree at {obj}", "{obj} graduate {subj} said",
          "{subj} enrolled at {obj} in college", "{subj} wrote a thesis at {obj}",
          "{subj} did coursework at {obj}", "{subj} was a freshman at {obj}",
          "{subj} majored in physics at {obj}"});
  family("org:date:formed_on",
         {"{subj} was founded in {obj}", "{subj} was incorporated in {obj}",
          "{subj} , established in {obj} , said", "{subj} was set up in {obj}",
          "{subj} has existed since its creation in {obj}", "{obj} saw the launch of {subj}",
          "{subj} opened its doors in {obj}", "{subj} traces its origins to {obj}",
          "{subj} came into being in {obj}", "{subj} was born out of a merger in {obj}"});
  family("org:gpe:headquartered_in",
         {"{subj} is headquartered in {obj}", "{subj} , based in {obj} , said",
          "{obj} - based {subj} reported results", "{subj} moved its head office to {obj}",
          "{subj} keeps its main office in {obj}", "{subj} has its base in {obj}",
          "{subj} is domiciled in {obj}", "{subj} runs everything from a tower in {obj}",
          "{subj} calls {obj} home", "{subj} relocated its executives to {obj}"});
  family("org:gpe:operations_in",
         {"{subj} operates in {obj}", "{subj} opened a store in {obj}", "{subj} expanded into {obj}",
          "{subj} sells its products in {obj}", "{obj} is a key market for {subj}",
          "{subj} runs a plant in {obj}", "{subj} employs workers in {obj}", "{subj} ships goods to {obj}",
          "{subj} has customers across {obj}", "{subj} built a warehouse in {obj}"});
  family("org:org:subsidiary_of",
         {"{subj} is a unit of {obj}", "{subj} , a subsidiary of {obj} , said", "{obj} owns {subj}",
          "{subj} is part of {obj}", "{obj} , the parent of {subj} , said", "{subj} is controlled by {obj}",
          "{obj} acquired {subj} outright", "{subj} answers to its owner {obj}",
          "{subj} was spun off by {obj}", "{subj} belongs to {obj}"});
  family("org:money:revenue_of",
         {"{subj} reported revenue of {obj}", "{subj} had sales of {obj}", "{subj} earned {obj} in sales",
          "{obj} in revenue for {subj}", "{subj} posted annual revenue of {obj}",
          "{subj} brought in {obj} last year", "{subj} booked turnover of {obj}",
          "{subj} took in {obj} from customers", "{subj} grossed {obj}",
          "{subj} generated {obj} in receipts"});

  const std::string none(kNoRelation);
  add(none, T::kPerson, T::kOrg, "{subj} criticized {obj}", 1.0);
  add(none, T::kPerson, T::kOrg, "{subj} never worked for {obj}", 1.0);
  add(none, T::kPerson, T::kOrg, "{subj} spoke about {obj} on Monday", 1.0);
  add(none, T::kPerson, T::kOrg, "{subj} sued {obj}", 1.0);
  add(none, T::kPerson, T::kTitle, "{subj} met the {obj}", 1.0);
  add(none, T::kPerson, T::kTitle, "{subj} criticized the {obj}", 1.0);
  add(none, T::kPerson, T::kUniv, "{subj} visited {obj}", 1.0);
  add(none, T::kPerson, T::kUniv, "{subj} gave a talk at {obj}", 1.0);
  add(none, T::kPerson, T::kUniv, "{subj} was rejected by {obj}", 1.0);
  add(none, T::kOrg, T::kDate, "{subj} held a meeting in {obj}", 1.0);
  add(none, T::kOrg, T::kDate, "{subj} was mentioned in a report in {obj}", 1.0);
  add(none, T::kOrg, T::kGpe, "{subj} has no office in {obj}", 1.0);
  add(none, T::kOrg, T::kGpe, "{subj} withdrew from {obj}", 1.0);
  add(none, T::kOrg, T::kGpe, "{subj} met officials from {obj}", 1.0);
  add(none, T::kOrg, T::kOrg, "{subj} competes with {obj}", 1.0);
  add(none, T::kOrg, T::kOrg, "{subj} sued {obj}", 1.0);
  add(none, T::kOrg, T::kOrg, "{subj} signed a deal with {obj}", 1.0);
  add(none, T::kOrg, T::kMoney, "{subj} paid a fine of {obj}", 1.0);
  add(none, T::kOrg, T::kMoney, "{subj} was fined {obj}", 1.0);

  s.prefixes = {"on Tuesday ,", "according to a filing ,", "in a statement ,", "separately ,",
                "meanwhile ,", "as expected ,"};
  s.suffixes = {", sources said", "last week", "according to reports", ", a spokesman said",
                "on Friday"};
  s.tail_frames = {"{subj} {verb} {obj}", "{subj} , who {verb} {obj} , said",
                   "sources say {subj} {verb} {obj}", "{subj} reportedly {verb} {obj}",
                   "officials confirmed that {subj} {verb} {obj}"};
  return s;
}

namespace {

// Lower-case syllables sharing no spelling with entity name syllables.
constexpr std::array<std::string_view, 16> kVerbSyllables = {
    "tra", "plo", "qui", "vex", "dru", "sko", "fle", "gri",
    "mun", "bla", "cro", "zet", "yul", "hox", "wib", "jas"};

constexpr std::array<std::string_view, 3> kVerbEndings = {"s", "es", "ed"};

}  // namespace

std::vector<Template> BiasSpec::all_templates() const {
  std::vector<Template> out = templates;
  if (tail_templates == 0) return out;
  if (tail_frames.empty()) throw GenerationError("tail_templates needs at least one tail frame");
  Rng rng(derive_seed(seed, {0x7A11}));
  std::set<std::string> used;
  for (const auto& label : relation_labels()) {
    if (label == kNoRelation) continue;
    double head = 0.0;
    for (const auto& t : templates) head += t.relation == label ? t.weight : 0.0;
    if (head == 0.0) continue;
    const auto [st, ot] = relation_argument_types(label);
    const double weight = head * tail_mass / (1.0 - tail_mass) / static_cast<double>(tail_templates);
    for (std::size_t i = 0; i < tail_templates; ++i) {
      std::string verb;
      for (std::size_t guard = 0;; ++guard) {
        if (guard > 100000) throw GenerationError("tail verb space exhausted");
        verb.clear();
        for (int k = 0; k < 3; ++k) verb += kVerbSyllables[rng.index(kVerbSyllables.size())];
        verb += kVerbEndings[rng.index(kVerbEndings.size())];
        if (used.insert(verb).second) break;
      }
      std::string text = tail_frames[i % tail_frames.size()];
      text.replace(text.find("{verb}"), 6, verb);
      out.push_back(Template{label, st, ot, std::move(text), weight});
    }
  }
  return out;
}

void BiasSpec::validate() const {
  auto unit = [](double v, const char* key) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw GenerationError(std::string(key) + " must lie in [0, 1], got " + std::to_string(v));
    }
  };
  unit(rho, "rho");
  unit(biased_fraction, "biased_fraction");
  unit(no_relation_rate, "no_relation_rate");
  unit(filler_rate, "filler_rate");
  if (pool_size == 0) throw GenerationError("pool_size must be positive");
  if (templates.empty()) throw GenerationError("no templates");
  if (!(tail_mass >= 0.0 && tail_mass < 1.0)) {
    throw GenerationError("tail_mass must lie in [0, 1), got " + std::to_string(tail_mass));
  }
  for (const auto& f : tail_frames) {
    const auto toks = split_tokens(f);
    if (std::count(toks.begin(), toks.end(), "{subj}") != 1 || std::count(toks.begin(), toks.end(), "{obj}") != 1 ||
        std::count(toks.begin(), toks.end(), "{verb}") != 1) {
      throw GenerationError("tail frame '" + f + "' needs exactly one {subj}, {obj} and {verb}");
    }
  }
  for (const auto& t : templates) {
    relation_index(t.relation);
    if (t.relation != kNoRelation) {
      const auto [st, ot] = relation_argument_types(t.relation);
      if (st != t.subj_type || ot != t.obj_type) {
        throw GenerationError("template '" + t.text + "' has types " +
                              std::string(type_name(t.subj_type)) + "/" +
                              std::string(type_name(t.obj_type)) + " but relation " + t.relation +
                              " needs " + std::string(type_name(st)) + "/" +
                              std::string(type_name(ot)));
      }
    }
    const auto toks = split_tokens(t.text);
    if (std::count(toks.begin(), toks.end(), "{subj}") != 1 ||
        std::count(toks.begin(), toks.end(), "{obj}") != 1) {
      throw GenerationError("template '" + t.text + "' needs exactly one {subj} and one {obj}");
    }
    if (!(t.weight > 0.0)) throw GenerationError("template '" + t.text + "' has non-positive weight");
  }
  check_context_sufficiency(*this);
}

void check_context_sufficiency(const BiasSpec& spec) {
  std::map<std::string, std::string> owner;
  std::map<std::string, std::size_t> per_relation;
  for (const auto& t : spec.all_templates()) {
    std::string key = t.text;
    auto put = [&](const std::string& ph, EntityType type) {
      const auto pos = key.find(ph);
      if (pos != std::string::npos) key.replace(pos, ph.size(), "<" + std::string(type_name(type)) + ">");
    };
    put("{subj}", t.subj_type);
    put("{obj}", t.obj_type);
    const auto [it, inserted] = owner.emplace(key, t.relation);
    if (!inserted && it->second != t.relation) {
      throw GenerationError("template '" + t.text + "' is shared by " + it->second + " and " +
                            t.relation);
    }
    ++per_relation[t.relation];
  }
  for (const auto& label : relation_labels()) {
    if (label == kNoRelation) continue;
    if (per_relation[label] < 3) {
      throw GenerationError("relation " + label + " has " + std::to_string(per_relation[label]) +
                            " templates; at least 3 are required");
    }
  }
}

// ---------------------------------------------------------------------------
// Generation

namespace {

struct EntityPools {
  // (label, type) -> names tied to that label
  std::map<std::pair<std::string, EntityType>, std::vector<std::string>> biased;
  std::map<EntityType, std::vector<std::string>> unbiased;
};

EntityPools assign_pools(const BiasSpec& spec, const EntityLexicon& lexicon) {
  EntityPools pools;
  for (EntityType type : kTypes) {
    std::vector<std::string> labels;
    for (const auto& label : relation_labels()) {
      const bool uses = std::any_of(spec.templates.begin(), spec.templates.end(), [&](const Template& t) {
        return t.relation == label && (t.subj_type == type || t.obj_type == type);
      });
      if (uses) labels.push_back(label);
    }
    if (labels.empty()) continue;
    const auto it = lexicon.pool_a.find(type);
    if (it == lexicon.pool_a.end() || it->second.empty()) {
      throw GenerationError("no pool A names for type " + std::string(type_name(type)));
    }
    std::vector<std::string> names = it->second;
    Rng rng(derive_seed(spec.seed, {0xB1, type_index(type)}));
    rng.shuffle(names);
    const auto n_biased =
        static_cast<std::size_t>(std::llround(spec.biased_fraction * static_cast<double>(names.size())));
    if (spec.rho > 0.0 && n_biased < labels.size()) {
      throw GenerationError(std::to_string(n_biased) + " biased " + std::string(type_name(type)) +
                            " names cannot cover " + std::to_string(labels.size()) + " relations");
    }
    if (spec.rho < 1.0 && n_biased >= names.size()) {
      throw GenerationError("no unbiased " + std::string(type_name(type)) + " names remain");
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (i < n_biased) {
        pools.biased[{labels[i % labels.size()], type}].push_back(names[i]);
      } else {
        pools.unbiased[type].push_back(names[i]);
      }
    }
  }
  return pools;
}

const Template& pick_template(const std::vector<const Template*>& candidates, Rng& rng) {
  double total = 0.0;
  for (const auto* t : candidates) total += t->weight;
  double u = rng.uniform() * total;
  for (const auto* t : candidates) {
    if (u < t->weight) return *t;
    u -= t->weight;
  }
  return *candidates.back();
}

Example compose(const std::string& id, const Template& t, const std::vector<std::string>& subj,
                const std::vector<std::string>& obj, const std::string& prefix,
                const std::string& suffix) {
  Example ex;
  ex.id = id;
  ex.relation = t.relation;
  ex.subj_type = t.subj_type;
  ex.obj_type = t.obj_type;
  for (auto& tok : split_tokens(prefix)) ex.tokens.push_back(std::move(tok));
  for (const auto& tok : split_tokens(t.text)) {
    if (tok == "{subj}") {
      ex.subj = Span{ex.tokens.size(), ex.tokens.size() + subj.size() - 1};
      ex.tokens.insert(ex.tokens.end(), subj.begin(), subj.end());
    } else if (tok == "{obj}") {
      ex.obj = Span{ex.tokens.size(), ex.tokens.size() + obj.size() - 1};
      ex.tokens.insert(ex.tokens.end(), obj.begin(), obj.end());
    } else {
      ex.tokens.push_back(tok);
    }
  }
  for (auto& tok : split_tokens(suffix)) ex.tokens.push_back(std::move(tok));
  validate_example(ex);
  return ex;
}

std::string format_id(std::string_view split, std::size_t i) {
  std::string n = std::to_string(i);
  if (n.size() < 5) n.insert(0, 5 - n.size(), '0');
  return std::string(split) + "-" + n;
}

// Draws a different name when the pool allows it.
std::string draw_distinct(const std::vector<std::string>& pool, const std::string& avoid, Rng& rng) {
  std::string name = rng.pick(pool);
  for (int tries = 0; name == avoid && pool.size() > 1 && tries < 64; ++tries) name = rng.pick(pool);
  return name;
}

}  // namespace

std::map<std::pair<EntityType, std::string>, std::string> biased_entities(
    const BiasSpec& spec, const EntityLexicon& lexicon) {
  std::map<std::pair<EntityType, std::string>, std::string> out;
  for (const auto& [key, names] : assign_pools(spec, lexicon).biased) {
    for (const auto& n : names) out[{key.second, n}] = key.first;
  }
  return out;
}

Corpus generate_corpus(const BiasSpec& spec, const EntityLexicon& lexicon, const SplitSizes& sizes) {
  if (sizes.train == 0 || sizes.dev == 0 || sizes.test_id == 0 || sizes.test_ood == 0) {
    throw GenerationError("split sizes must be positive");
  }
  spec.validate();
  lexicon.validate();
  const EntityPools pools = assign_pools(spec, lexicon);

  const std::vector<Template> templates = spec.all_templates();
  std::map<std::string, std::vector<const Template*>> by_label;
  for (const auto& t : templates) by_label[t.relation].push_back(&t);
  std::vector<std::string> content;
  for (const auto& label : relation_labels()) {
    if (label != kNoRelation && by_label.count(label)) content.push_back(label);
  }
  const bool has_none = by_label.count(std::string(kNoRelation)) > 0;

  auto fill = [&](const std::string& label, EntityType type, Rng& rng) -> const std::vector<std::string>& {
    if (rng.bernoulli(spec.rho)) {
      const auto it = pools.biased.find({label, type});
      if (it != pools.biased.end() && !it->second.empty()) return it->second;
    }
    const auto it = pools.unbiased.find(type);
    if (it == pools.unbiased.end() || it->second.empty()) {
      throw GenerationError("no names available for " + std::string(type_name(type)) + " in " + label);
    }
    return it->second;
  };

  auto make_split = [&](std::string_view name, std::size_t count, std::uint64_t stream) {
    Rng rng(derive_seed(spec.seed, {0x5E, stream}));
    std::vector<Example> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const bool none = has_none && (content.empty() || rng.bernoulli(spec.no_relation_rate));
      const std::string& label = none ? std::string(kNoRelation) : content[rng.index(content.size())];
      const Template& t = pick_template(by_label.at(label), rng);
      const std::string subj = rng.pick(fill(label, t.subj_type, rng));
      const std::string obj = draw_distinct(fill(label, t.obj_type, rng), subj, rng);
      const std::string prefix =
          (!spec.prefixes.empty() && rng.bernoulli(spec.filler_rate)) ? rng.pick(spec.prefixes) : "";
      const std::string suffix =
          (!spec.suffixes.empty() && rng.bernoulli(spec.filler_rate)) ? rng.pick(spec.suffixes) : "";
      out.push_back(compose(format_id(name, i), t, split_tokens(subj), split_tokens(obj), prefix, suffix));
    }
    return out;
  };

  Corpus corpus;
  corpus.train = make_split("train", sizes.train, 0);
  corpus.dev = make_split("dev", sizes.dev, 1);
  corpus.test_id = make_split("test_id", sizes.test_id, 2);
  return corpus;
}

Example replace_entities(const Example& ex, const std::vector<std::string>& subj_tokens,
                         const std::vector<std::string>& obj_tokens) {
  if (subj_tokens.empty() || obj_tokens.empty()) throw ReplacementError("empty replacement name");
  Example out = ex;
  out.tokens.clear();
  for (std::size_t i = 0; i < ex.tokens.size();) {
    if (i == ex.subj.first) {
      out.subj = Span{out.tokens.size(), out.tokens.size() + subj_tokens.size() - 1};
      out.tokens.insert(out.tokens.end(), subj_tokens.begin(), subj_tokens.end());
      i = ex.subj.last + 1;
    } else if (i == ex.obj.first) {
      out.obj = Span{out.tokens.size(), out.tokens.size() + obj_tokens.size() - 1};
      out.tokens.insert(out.tokens.end(), obj_tokens.begin(), obj_tokens.end());
      i = ex.obj.last + 1;
    } else {
      out.tokens.push_back(ex.tokens[i++]);
    }
  }
  return out;
}

std::vector<Example> make_ood_testset(std::span<const Example> test_id, const EntityLexicon& lexicon,
                                      std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x00D}));
  auto pool = [&](EntityType type) -> const std::vector<std::string>& {
    const auto it = lexicon.pool_b.find(type);
    if (it == lexicon.pool_b.end() || it->second.empty()) {
      throw ReplacementError("no pool B names for type " + std::string(type_name(type)));
    }
    return it->second;
  };
  std::vector<Example> out;
  out.reserve(test_id.size());
  for (const auto& ex : test_id) {
    const std::string subj = rng.pick(pool(ex.subj_type));
    const std::string obj = ex.subj_type == ex.obj_type ? draw_distinct(pool(ex.obj_type), subj, rng)
                                                        : rng.pick(pool(ex.obj_type));
    Example rep = replace_entities(ex, split_tokens(subj), split_tokens(obj));
    rep.id = "ood-" + ex.id;
    out.push_back(std::move(rep));
  }
  return out;
}

Example apply_entity_mask_baseline(const Example& ex) {
  return replace_entities(ex, {generic_type_token(ex.subj_type, true)},
                          {generic_type_token(ex.obj_type, false)});
}

Example apply_entity_substitution_baseline(const Example& ex, const EntityLexicon& lexicon, Rng& rng) {
  auto pool = [&](EntityType type) -> const std::vector<std::string>& {
    const auto it = lexicon.pool_a.find(type);
    if (it == lexicon.pool_a.end() || it->second.empty()) {
      throw ReplacementError("no pool A names for type " + std::string(type_name(type)));
    }
    return it->second;
  };
  const std::string subj = rng.pick(pool(ex.subj_type));
  const std::string obj = rng.pick(pool(ex.obj_type));
  return replace_entities(ex, split_tokens(subj), split_tokens(obj));
}

}  // namespace vibre
