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

#include "vibre/model.hpp"

#include "vibre/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace vibre {

// ---------------------------------------------------------------------------
// Vocabulary

namespace {

std::vector<std::string> reserved_tokens() {
  std::vector<std::string> r = {std::string(Vocabulary::kPadToken), std::string(Vocabulary::kUnkToken),
                                std::string(Vocabulary::kSubjMarkerToken),
                                std::string(Vocabulary::kObjMarkerToken)};
  for (EntityType t : all_entity_types()) {
    r.push_back(generic_type_token(t, true));
    r.push_back(generic_type_token(t, false));
  }
  return r;
}

}  // namespace

std::size_t Vocabulary::reserved_count() { return reserved_tokens().size(); }

Vocabulary Vocabulary::build(std::span<const Example> examples) {
  std::vector<std::string> tokens = reserved_tokens();
  const std::set<std::string> reserved(tokens.begin(), tokens.end());
  std::set<std::string> words;
  for (const auto& ex : examples) {
    for (const auto& t : ex.tokens) {
      if (!reserved.count(t)) words.insert(t);
    }
  }
  tokens.insert(tokens.end(), words.begin(), words.end());
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto reserved = reserved_tokens();
  if (tokens.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    throw CheckpointError("vocabulary does not start with the reserved tokens");
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], i).second) {
      throw CheckpointError("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

std::size_t Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || ffn_width == 0) fail("sizes must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (max_sequence_length < 2) fail("max_sequence_length too small");
  if (n_relations < 2) fail("n_relations must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(beta >= 0.0 && beta <= 1.0)) fail("beta must lie in [0, 1]");
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"ffn_width", c.ffn_width},
          {"max_sequence_length", c.max_sequence_length},
          {"n_relations", c.n_relations},
          {"dropout", c.dropout},
          {"beta", c.beta},
          {"use_vib", c.use_vib},
          {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "d_model") c.d_model = value.get<std::size_t>();
    else if (key == "n_layers") c.n_layers = value.get<std::size_t>();
    else if (key == "n_heads") c.n_heads = value.get<std::size_t>();
    else if (key == "ffn_width") c.ffn_width = value.get<std::size_t>();
    else if (key == "max_sequence_length") c.max_sequence_length = value.get<std::size_t>();
    else if (key == "n_relations") c.n_relations = value.get<std::size_t>();
    else if (key == "dropout") c.dropout = value.get<double>();
    else if (key == "beta") c.beta = value.get<double>();
    else if (key == "use_vib") c.use_vib = value.get<bool>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Marking and batching

MarkedExample mark_entities(const Example& ex, const Vocabulary& vocab, std::size_t max_length) {
  validate_example(ex);
  MarkedExample m;
  std::vector<std::uint8_t> bits;
  auto emit = [&](std::string tok, bool entity) {
    m.ids.push_back(vocab.id(tok));
    m.tokens.push_back(std::move(tok));
    bits.push_back(entity ? 1 : 0);
  };
  for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
    if (i == ex.subj.first) {
      m.subj_pos = m.tokens.size();
      emit(std::string(Vocabulary::kSubjMarkerToken), false);
    }
    if (i == ex.obj.first) {
      m.obj_pos = m.tokens.size();
      emit(std::string(Vocabulary::kObjMarkerToken), false);
    }
    const bool entity = (i >= ex.subj.first && i <= ex.subj.last) || (i >= ex.obj.first && i <= ex.obj.last);
    emit(ex.tokens[i], entity);
    if (i == ex.subj.last) emit(std::string(Vocabulary::kSubjMarkerToken), false);
    if (i == ex.obj.last) emit(std::string(Vocabulary::kObjMarkerToken), false);
  }
  if (m.tokens.size() > max_length) {
    throw TruncationError("example '" + ex.id + "' has " + std::to_string(m.tokens.size()) +
                          " marked tokens; max_sequence_length is " + std::to_string(max_length));
  }
  m.mask = EntityMask(std::move(bits));
  m.label = relation_index(ex.relation);
  return m;
}

Batch make_batch(std::span<const MarkedExample> examples, std::size_t pad_to) {
  if (examples.empty()) throw ContractError("make_batch: empty batch");
  Batch b;
  b.size = examples.size();
  b.seq_len = pad_to;
  for (const auto& m : examples) b.seq_len = std::max(b.seq_len, m.ids.size());
  const std::size_t rows = b.size * b.seq_len;
  b.ids.assign(rows, Vocabulary::kPad);
  b.positions.resize(rows);
  b.valid.assign(rows, 0);
  std::vector<std::uint8_t> bits(rows, 0);
  for (std::size_t i = 0; i < b.size; ++i) {
    const auto& m = examples[i];
    for (std::size_t t = 0; t < b.seq_len; ++t) {
      const std::size_t r = i * b.seq_len + t;
      b.positions[r] = t;
      if (t < m.ids.size()) {
        b.ids[r] = m.ids[t];
        b.valid[r] = 1;
        bits[r] = m.mask[t] ? 1 : 0;
      }
    }
    b.subj_rows.push_back(i * b.seq_len + m.subj_pos);
    b.obj_rows.push_back(i * b.seq_len + m.obj_pos);
    b.labels.push_back(m.label);
  }
  b.mask = EntityMask(std::move(bits));
  return b;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

constexpr double kEmbeddingStd = 0.3;

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.mutable_data()) v = stddev * rng.normal();
  return t;
}

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return normal_param({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones_param(std::size_t n) { return Tensor::full({n}, 1.0, true); }

}  // namespace

ModelState ModelState::init(const ModelConfig& config, std::size_t vocab_size) {
  config.validate();
  Rng rng(derive_seed(config.seed, {0x1417}));
  const std::size_t d = config.d_model;
  ModelState s;
  s.config = config;
  s.token_embedding = normal_param({vocab_size, d}, kEmbeddingStd, rng);
  s.position_embedding = normal_param({config.max_sequence_length, d}, kEmbeddingStd, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    EncoderLayer L;
    L.ln1_gain = ones_param(d);
    L.ln1_bias = zeros_param(d);
    L.w_q = xavier(d, d, rng);
    L.b_q = zeros_param(d);
    L.w_k = xavier(d, d, rng);
    L.w_v = xavier(d, d, rng);
    L.b_v = zeros_param(d);
    L.w_o = xavier(d, d, rng);
    L.b_o = zeros_param(d);
    L.ln2_gain = ones_param(d);
    L.ln2_bias = zeros_param(d);
    L.w_ff1 = xavier(d, config.ffn_width, rng);
    L.b_ff1 = zeros_param(config.ffn_width);
    L.w_ff2 = xavier(config.ffn_width, d, rng);
    L.b_ff2 = zeros_param(d);
    s.layers.push_back(std::move(L));
  }
  s.final_gain = ones_param(d);
  s.final_bias = zeros_param(d);
  s.vib = VibParams::init(d, config.beta, rng);
  s.classifier_w = xavier(2 * d, config.n_relations, rng);
  s.classifier_b = zeros_param(config.n_relations);
  return s;
}

std::vector<std::pair<std::string, Tensor>> ModelState::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out = {{"token_embedding", token_embedding},
                                                     {"position_embedding", position_embedding}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.insert(out.end(), {{p + "ln1_gain", L.ln1_gain}, {p + "ln1_bias", L.ln1_bias},
                           {p + "w_q", L.w_q},           {p + "b_q", L.b_q},
                           {p + "w_k", L.w_k},
                           {p + "w_v", L.w_v},           {p + "b_v", L.b_v},
                           {p + "w_o", L.w_o},           {p + "b_o", L.b_o},
                           {p + "ln2_gain", L.ln2_gain}, {p + "ln2_bias", L.ln2_bias},
                           {p + "w_ff1", L.w_ff1},       {p + "b_ff1", L.b_ff1},
                           {p + "w_ff2", L.w_ff2},       {p + "b_ff2", L.b_ff2}});
  }
  out.insert(out.end(), {{"final_gain", final_gain},
                         {"final_bias", final_bias},
                         {"vib.w_mu", vib.w_mu},
                         {"vib.b_mu", vib.b_mu},
                         {"vib.w_sigma", vib.w_sigma},
                         {"vib.b_sigma", vib.b_sigma},
                         {"classifier_w", classifier_w},
                         {"classifier_b", classifier_b}});
  return out;
}

std::vector<Tensor> ModelState::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

ModelState ModelState::clone() const {
  ModelState s = *this;
  auto deep = [](Tensor& t) { t = t.clone(); };
  deep(s.token_embedding);
  deep(s.position_embedding);
  for (auto& L : s.layers) {
    for (Tensor* t : {&L.ln1_gain, &L.ln1_bias, &L.w_q, &L.b_q, &L.w_k, &L.w_v, &L.b_v,
                      &L.w_o, &L.b_o, &L.ln2_gain, &L.ln2_bias, &L.w_ff1, &L.b_ff1, &L.w_ff2, &L.b_ff2}) {
      deep(*t);
    }
  }
  for (Tensor* t : {&s.final_gain, &s.final_bias, &s.vib.w_mu, &s.vib.b_mu, &s.vib.w_sigma,
                    &s.vib.b_sigma, &s.classifier_w, &s.classifier_b}) {
    deep(*t);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  Tensor keep = Tensor::zeros(x.shape());
  const double s = 1.0 / (1.0 - p);
  for (auto& v : keep.mutable_data()) v = rng.bernoulli(p) ? 0.0 : s;
  return mul(x, keep);
}

}  // namespace

Encoded encode(const ModelState& model, const Batch& batch, const EncodeOptions& options) {
  const ModelConfig& cfg = model.config;
  if (batch.seq_len > cfg.max_sequence_length) {
    throw TruncationError("batch length " + std::to_string(batch.seq_len) + " exceeds max_sequence_length " +
                          std::to_string(cfg.max_sequence_length));
  }
  const bool train = options.mode == Mode::kTrain;
  const bool use_dropout = train && options.dropout && cfg.dropout > 0.0;
  if (train && (use_dropout || (cfg.use_vib && options.eps == nullptr)) && options.rng == nullptr) {
    throw ContractError("encode: train mode needs a noise generator");
  }

  Tensor x = add(embedding(model.token_embedding, batch.ids),
                 embedding(model.position_embedding, batch.positions));
  if (!options.occluded_rows.empty()) {
    std::vector<double> keep(x.dim(0), 1.0);
    for (std::size_t r : options.occluded_rows) keep.at(r) = 0.0;
    x = scale_rows(x, keep);
  }

  Encoded out;
  if (cfg.use_vib) {
    GaussianCode code = encode_gaussian(x, model.vib);
    if (train) {
      const Tensor eps = options.eps ? *options.eps : draw_noise(code.mu.shape(), *options.rng);
      code.z = sample_z(code.mu, code.sigma, eps);
    } else {
      code.z = code.mu;
    }
    x = blend(x, code.z, batch.mask, model.vib.beta);
    out.mu = code.mu;
    out.sigma = code.sigma;
  }

  const std::size_t heads = cfg.n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.d_model / heads));
  for (const EncoderLayer& L : model.layers) {
    const Tensor a = layer_norm(x, L.ln1_gain, L.ln1_bias);
    const Tensor q = split_heads(linear(a, L.w_q, L.b_q), batch.size, heads);
    const Tensor k = split_heads(matmul(a, L.w_k), batch.size, heads);
    const Tensor v = split_heads(linear(a, L.w_v, L.b_v), batch.size, heads);
    const Tensor attn = masked_softmax(scale(batched_matmul(q, k, true), inv_sqrt_dh), batch.valid, heads);
    Tensor o = linear(merge_heads(batched_matmul(attn, v), batch.size, heads), L.w_o, L.b_o);
    if (use_dropout) o = dropout(o, cfg.dropout, *options.rng);
    x = add(x, o);

    const Tensor f = layer_norm(x, L.ln2_gain, L.ln2_bias);
    Tensor g = linear(gelu(linear(f, L.w_ff1, L.b_ff1)), L.w_ff2, L.b_ff2);
    if (use_dropout) g = dropout(g, cfg.dropout, *options.rng);
    x = add(x, g);
  }
  out.hidden = layer_norm(x, model.final_gain, model.final_bias);
  return out;
}

Tensor classify(const Tensor& hidden, std::span<const std::size_t> subj_rows,
                std::span<const std::size_t> obj_rows, const Tensor& w, const Tensor& b) {
  if (subj_rows.size() != obj_rows.size()) {
    throw DimensionError("classify: " + std::to_string(subj_rows.size()) + " subject rows vs " +
                         std::to_string(obj_rows.size()) + " object rows");
  }
  return linear(concat_cols(gather_rows(hidden, subj_rows), gather_rows(hidden, obj_rows)), w, b);
}

ForwardResult forward(const ModelState& model, const Batch& batch, const EncodeOptions& options) {
  ForwardResult r;
  r.encoded = encode(model, batch, options);
  r.logits = classify(r.encoded.hidden, batch.subj_rows, batch.obj_rows, model.classifier_w,
                      model.classifier_b);
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kFormat = "vibre-checkpoint";

std::string encode_bits(std::span<const double> values) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(values.size() * 16, '0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int k = 15; k >= 0; --k) {
      out[i * 16 + static_cast<std::size_t>(k)] = digits[bits & 0xF];
      bits >>= 4;
    }
  }
  return out;
}

std::vector<double> decode_bits(const std::string& hex, const std::string& name) {
  if (hex.size() % 16 != 0) throw CheckpointError("tensor '" + name + "' has truncated data");
  std::vector<double> out(hex.size() / 16);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < 16; ++k) {
      const char c = hex[i * 16 + k];
      std::uint64_t nib;
      if (c >= '0' && c <= '9') nib = static_cast<std::uint64_t>(c - '0');
      else if (c >= 'a' && c <= 'f') nib = static_cast<std::uint64_t>(c - 'a' + 10);
      else throw CheckpointError("tensor '" + name + "' has invalid data");
      bits = (bits << 4) | nib;
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

nlohmann::json tensor_to_json(const std::string& name, const Tensor& t) {
  return {{"name", name}, {"shape", t.shape()}, {"data", encode_bits(t.data())}};
}

Tensor tensor_from_json(const nlohmann::json& j, bool requires_grad) {
  const auto name = j.at("name").get<std::string>();
  return Tensor(j.at("shape").get<Shape>(), decode_bits(j.at("data").get<std::string>(), name), requires_grad);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kCheckpointVersion;
  j["method"] = ckpt.method;
  j["config"] = config_to_json(ckpt.model.config);
  j["relations"] = ckpt.relations;
  j["vocab"] = ckpt.vocab.tokens();
  j["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.model.named_parameters()) j["tensors"].push_back(tensor_to_json(name, t));
  j["extra_tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.extra_tensors) j["extra_tensors"].push_back(tensor_to_json(name, t));
  j["extra"] = ckpt.extra;
  try {
    auto out = open_output(path);
    out << j.dump() << '\n';
    finish_output(out, path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat) throw CheckpointError("not a vibre checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported");
    }
    Checkpoint c;
    c.method = j.at("method").get<std::string>();
    c.relations = j.at("relations").get<std::vector<std::string>>();
    c.vocab = Vocabulary::from_tokens(j.at("vocab").get<std::vector<std::string>>());
    const ModelConfig cfg = config_from_json(j.at("config"));
    c.model = ModelState::init(cfg, c.vocab.size());
    auto params = c.model.named_parameters();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != params.size()) {
      throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model needs " +
                            std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor loaded = tensor_from_json(tensors[i], true);
      const auto name = tensors[i].at("name").get<std::string>();
      if (name != params[i].first || loaded.shape() != params[i].second.shape()) {
        throw CheckpointError("tensor '" + name + "' " + shape_string(loaded.shape()) + " does not match '" +
                              params[i].first + "' " + shape_string(params[i].second.shape()));
      }
      std::copy(loaded.data().begin(), loaded.data().end(), params[i].second.mutable_data().begin());
    }
    for (const auto& t : j.at("extra_tensors")) {
      c.extra_tensors.emplace_back(t.at("name").get<std::string>(), tensor_from_json(t, false));
    }
    c.extra = j.at("extra");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint '" + path.string() + "' is malformed: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError("checkpoint '" + path.string() + "': " + e.what());
  }
}

}  // namespace vibre
