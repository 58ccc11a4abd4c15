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

#ifndef VIBRE_MODEL_HPP_
#define VIBRE_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vibre/corpus.hpp"
#include "vibre/rng.hpp"
#include "vibre/tensor.hpp"
#include "vibre/vib.hpp"

namespace vibre {

/// A marked sequence does not fit the model's position budget.
class TruncationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint file is unreadable, from another format version, or
/// inconsistent with the data it is used with.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kSubjMarker = 2;
  static constexpr std::size_t kObjMarker = 3;

  static constexpr std::string_view kPadToken = "[PAD]";
  static constexpr std::string_view kUnkToken = "[UNK]";
  static constexpr std::string_view kSubjMarkerToken = "@";
  static constexpr std::string_view kObjMarkerToken = "#";

  /// Reserved tokens, the generic type tokens, then the sorted corpus tokens.
  static Vocabulary build(std::span<const Example> examples);

  /// Restores a serialised token list; the reserved prefix must match.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  /// Number of reserved ids (pad, unk, markers, generic type tokens).
  static std::size_t reserved_count();

  std::size_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_width = 256;
  std::size_t max_sequence_length = 64;
  std::size_t n_relations = 9;
  double dropout = 0.1;
  double beta = 0.5;
  bool use_vib = false;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Example after entity_marker_punctuation: "@ subj @" and "# obj #".
struct MarkedExample {
  std::vector<std::string> tokens;
  std::vector<std::size_t> ids;
  std::size_t subj_pos = 0;  // opening "@"
  std::size_t obj_pos = 0;   // opening "#"
  EntityMask mask;           // 1 on original entity tokens, 0 on markers
  std::size_t label = 0;
};

/// Throws DataError on overlapping spans and TruncationError when the marked
/// sequence is longer than max_length.
MarkedExample mark_entities(const Example& ex, const Vocabulary& vocab, std::size_t max_length);

/// Padded batch of marked examples laid out as [batch * seq_len] rows.
struct Batch {
  std::size_t size = 0;
  std::size_t seq_len = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> positions;
  std::vector<unsigned char> valid;  // 0 on padding
  EntityMask mask;
  std::vector<std::size_t> subj_rows;
  std::vector<std::size_t> obj_rows;
  std::vector<std::size_t> labels;
};

/// pad_to, when larger than the longest member, fixes the padded length.
Batch make_batch(std::span<const MarkedExample> examples, std::size_t pad_to = 0);

struct EncoderLayer {
  Tensor ln1_gain, ln1_bias;
  // No key bias: it shifts every score of a query equally and cancels in softmax.
  Tensor w_q, b_q, w_k, w_v, b_v, w_o, b_o;
  Tensor ln2_gain, ln2_bias;
  Tensor w_ff1, b_ff1, w_ff2, b_ff2;
};

struct ModelState {
  ModelConfig config;
  Tensor token_embedding;     // [V x d]
  Tensor position_embedding;  // [max_len x d]
  std::vector<EncoderLayer> layers;
  Tensor final_gain, final_bias;
  VibParams vib;
  Tensor classifier_w;  // [2d x n_relations]
  Tensor classifier_b;  // [n_relations]

  static ModelState init(const ModelConfig& config, std::size_t vocab_size);

  /// Stable order; names are used by checkpoints.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;

  ModelState clone() const;
};

enum class Mode { kTrain, kInfer };

struct EncodeOptions {
  Mode mode = Mode::kInfer;
  Rng* rng = nullptr;                       // noise and dropout source in train mode
  const Tensor* eps = nullptr;              // frozen VIB noise overriding rng draws
  bool dropout = true;                      // train mode only
  std::vector<std::size_t> occluded_rows;   // input embeddings zeroed before the VIB stage
};

struct Encoded {
  Tensor hidden;  // [batch * seq_len x d]
  Tensor mu;      // undefined when the model has no VIB stage
  Tensor sigma;
};

/// embed -> encode_gaussian -> sample_z -> blend -> transformer -> final norm.
Encoded encode(const ModelState& model, const Batch& batch, const EncodeOptions& options = {});

/// logits = W [h_subj ; h_obj] + b.
Tensor classify(const Tensor& hidden, std::span<const std::size_t> subj_rows,
                std::span<const std::size_t> obj_rows, const Tensor& w, const Tensor& b);

struct ForwardResult {
  Tensor logits;
  Encoded encoded;
};

ForwardResult forward(const ModelState& model, const Batch& batch, const EncodeOptions& options = {});

struct Checkpoint {
  std::string method;
  std::vector<std::string> relations;
  Vocabulary vocab;
  ModelState model;
  /// Additional named tensors (optimiser moments for resumable training).
  std::vector<std::pair<std::string, Tensor>> extra_tensors;
  nlohmann::json extra = nlohmann::json::object();
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

}  // namespace vibre

#endif  // VIBRE_MODEL_HPP_
