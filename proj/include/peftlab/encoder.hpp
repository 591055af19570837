#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peftlab/ops.hpp"
#include "peftlab/rng.hpp"
#include "peftlab/tensor.hpp"

namespace peftlab::model {

struct EncoderConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 128;
  double dropout_rate = 0.1;
  // MLM output projection shares the token embedding table when true.
  bool tie_mlm_head = true;

  // Throws ConfigError on violated invariants.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct NamedParameter {
  std::string name;
  ad::Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

std::size_t count_parameters(const ParameterList& params);
std::size_t count_trainable(const ParameterList& params);

enum class Projection : std::size_t { Q = 0, K = 1, V = 2, O = 3 };
std::string_view to_string(Projection p);  // "Wq", "Wk", "Wv", "Wo"
Projection parse_projection(std::string_view name);

struct AttentionParams {
  std::array<ad::Tensor, 4> weight;  // [d_model, d_model], indexed by Projection
  std::array<ad::Tensor, 4> bias;    // [d_model]
};

struct LayerParams {
  AttentionParams attn;
  ad::Tensor ln1_gamma, ln1_beta;
  ad::Tensor ffn_w1, ffn_b1;  // [d_ff, d_model], [d_ff]
  ad::Tensor ffn_w2, ffn_b2;  // [d_model, d_ff], [d_model]
  ad::Tensor ln2_gamma, ln2_beta;
};

// Per-layer key/value rows prepended to the attention keys and values.
struct LayerPrefix {
  ad::Tensor key;    // [prefix_len, d_model]
  ad::Tensor value;  // [prefix_len, d_model]
};

// Everything an adapter can inject into a forward pass.
struct Injections {
  ad::Tensor pre_tokens;   // [p_pre, d_model] virtual tokens before the text
  ad::Tensor post_tokens;  // [p_post, d_model] virtual tokens after the text
  std::vector<LayerPrefix> prefixes;  // empty, or one entry per layer
  // Per-layer replacement projection weights (e.g. W + low-rank update).
  // Undefined entries fall back to the base weight.
  std::vector<std::array<ad::Tensor, 4>> weight_overrides;
};

struct ForwardOptions {
  bool train = false;       // enables dropout
  Rng* rng = nullptr;       // required when train && dropout_rate > 0
  bool keep_attention = false;
};

struct EncoderOutput {
  ad::Tensor hidden;  // [sequence, d_model]
  // When requested: [layer * n_heads + head] -> [queries, keys] probabilities.
  std::vector<ad::Tensor> attention;
};

/// Bidirectional post-LN transformer encoder with learned absolute positions
/// and an MLM output head. The parameter registry covers the encoder body and
/// the MLM head ("mlm.*"); task heads live outside the model.
class EncoderModel {
 public:
  EncoderModel(const EncoderConfig& config, std::uint64_t seed);

  EncoderModel(const EncoderModel&) = delete;
  EncoderModel& operator=(const EncoderModel&) = delete;
  EncoderModel(EncoderModel&&) = default;
  EncoderModel& operator=(EncoderModel&&) = default;

  // Deep copy, including trainable flags.
  EncoderModel clone() const;
  // Copies parameter values (not flags) from a model of the same config.
  void copy_weights_from(const EncoderModel& other);

  const EncoderConfig& config() const { return config_; }
  const ParameterList& parameters() const { return params_; }
  // Body parameters only (excludes "mlm.*").
  ParameterList body_parameters() const;
  ParameterList mlm_head_parameters() const;
  ad::Tensor parameter(std::string_view name) const;

  const ad::Tensor& token_embeddings() const { return tok_emb_; }
  const LayerParams& layer(std::size_t i) const { return layers_.at(i); }

  ad::Tensor embed_tokens(std::span<const int> ids) const;

  EncoderOutput forward(std::span<const int> ids, const Injections& inj = {},
                        const ForwardOptions& opts = {}) const;
  // Runs the encoder on an already-embedded sequence (token plus virtual rows).
  EncoderOutput forward_embedded(const ad::Tensor& embedded, const Injections& inj = {},
                                 const ForwardOptions& opts = {}) const;

  // MLM logits [len(positions), vocab_size] at the selected rows of `hidden`.
  ad::Tensor mlm_logits(const ad::Tensor& hidden, std::span<const int> positions) const;

 private:
  void register_parameters();

  EncoderConfig config_;
  ad::Tensor tok_emb_, pos_emb_, emb_ln_gamma_, emb_ln_beta_;
  std::vector<LayerParams> layers_;
  ad::Tensor mlm_bias_, mlm_decoder_;
  ParameterList params_;
};

// Hidden state at `index` (the [CLS] row by default) as a [1, d_model] matrix.
ad::Tensor pooled_representation(const ad::Tensor& hidden, std::size_t index = 0);

struct FreezePolicy {
  enum class Kind { TrainAll, FreezeEmbeddingsOnly, FreezeFirstK, FreezeAll };
  Kind kind = Kind::TrainAll;
  std::size_t k = 0;

  static FreezePolicy train_all() { return {Kind::TrainAll, 0}; }
  static FreezePolicy embeddings_only() { return {Kind::FreezeEmbeddingsOnly, 0}; }
  static FreezePolicy first_k_layers(std::size_t k) { return {Kind::FreezeFirstK, k}; }
  static FreezePolicy all() { return {Kind::FreezeAll, 0}; }

  bool operator==(const FreezePolicy&) const = default;
};

std::string to_string(const FreezePolicy& p);
FreezePolicy parse_freeze_policy(std::string_view kind, std::size_t k);

// Applies the policy to the model's trainable flags. Freezing the first k
// layers also freezes the embeddings. Throws ConfigError if k > n_layers.
void set_trainable(EncoderModel& model, const FreezePolicy& policy);

/// Affine head x[m, d_in] -> logits[m, n_out]; used for [CLS] classification,
/// token classification and the fusion classifier.
class LinearHead {
 public:
  LinearHead() = default;
  LinearHead(std::string name, std::size_t d_in, std::size_t n_out, Rng& rng);

  ad::Tensor forward(const ad::Tensor& x) const;
  ParameterList parameters() const;
  std::size_t in_features() const { return weight_.cols(); }
  std::size_t out_features() const { return weight_.rows(); }
  LinearHead clone() const;

 private:
  std::string name_;
  ad::Tensor weight_;  // [n_out, d_in]
  ad::Tensor bias_;    // [n_out]
};

}  // namespace peftlab::model
