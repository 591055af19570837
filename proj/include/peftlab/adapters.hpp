#pragma once

#include <cstddef>
#include <cstdint>
#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "peftlab/classifier.hpp"
#include "peftlab/encoder.hpp"
#include "peftlab/text.hpp"

namespace peftlab::peft {

/// Hard prompt with `{text}`, `{disease}` and exactly one `{mask}` placeholder.
/// Without `{text}` the rendered prompt is appended after the input text.
class PromptTemplate {
 public:
  explicit PromptTemplate(std::string pattern);

  const std::string& pattern() const { return pattern_; }
  bool uses_disease() const;
  bool has_text_slot() const;
  // Pattern written with "[mask]" and "{name of the disease}".
  std::string display() const;
  // Words of the template outside placeholders (must all be in the vocab).
  std::vector<std::string> fixed_words() const;

  bool operator==(const PromptTemplate&) const = default;

 private:
  std::string pattern_;
};

struct RenderedPrompt {
  std::string text;       // input text with the prompt, [MASK] in place of {mask}
  std::size_t mask_slot;  // token index of [MASK] within tokenize(text)
};

RenderedPrompt render_template(const PromptTemplate& tmpl, const text::RawExample& example,
                               const text::Vocabulary& vocab);

// [CLS] + text + prompt tokens. The text is truncated first so that the whole
// prompt, including [MASK], always fits in max_length.
text::EncodedExample encode_with_template(const text::RawExample& example,
                                          const PromptTemplate& tmpl,
                                          const text::Vocabulary& vocab, int label_id,
                                          std::size_t max_length);

/// Ordered class-label -> word map. Order defines class ids.
class Verbalizer {
 public:
  explicit Verbalizer(std::vector<std::pair<std::string, std::string>> entries);

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::vector<std::string> labels() const;
  std::vector<std::string> words() const;
  // Vocabulary ids of the words; throws DataError unless each is one in-vocab token.
  std::vector<int> token_ids(const text::Vocabulary& vocab) const;

  bool operator==(const Verbalizer&) const = default;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

struct VerbalizerDecision {
  std::size_t class_index = 0;
  std::string label;
  std::vector<double> probabilities;
};

// Softmax over the verbalizer columns of one MLM logits row; ties resolve to
// the earliest class in verbalizer order.
VerbalizerDecision classify_by_verbalizer(std::span<const double> logits_row,
                                          const Verbalizer& verbalizer,
                                          std::span<const int> token_ids);

struct SoftPromptSpec {
  std::size_t p_pre = 8;
  std::size_t p_post = 0;
  bool operator==(const SoftPromptSpec&) const = default;
};

struct PrefixSpec {
  std::size_t prefix_len = 4;
  bool reparameterize = false;
  bool operator==(const PrefixSpec&) const = default;
};

struct LoraSpec {
  std::size_t rank = 4;
  double alpha = 8.0;
  std::vector<model::Projection> targets = {model::Projection::Q, model::Projection::V};
  bool operator==(const LoraSpec&) const = default;
};

struct HardPromptSpec {
  PromptTemplate prompt;
  Verbalizer verbalizer;
  bool operator==(const HardPromptSpec&) const = default;
};

namespace technique {
struct FullFineTune {
  bool operator==(const FullFineTune&) const = default;
};
struct PromptTuning {
  HardPromptSpec hard;
  bool operator==(const PromptTuning&) const = default;
};
struct SoftPrompt {
  SoftPromptSpec bank;
  bool operator==(const SoftPrompt&) const = default;
};
struct WrappedSoftPrompt {
  SoftPromptSpec bank;
  bool operator==(const WrappedSoftPrompt&) const = default;
};
struct SoftPlusHardPrompt {
  SoftPromptSpec bank;
  HardPromptSpec hard;
  bool operator==(const SoftPlusHardPrompt&) const = default;
};
struct PrefixTuning {
  PrefixSpec prefix;
  bool operator==(const PrefixTuning&) const = default;
};
// prefix.prefix_len == 0 disables the prefix and leaves LoRA alone.
struct PrefixPlusLora {
  PrefixSpec prefix;
  LoraSpec lora;
  bool operator==(const PrefixPlusLora&) const = default;
};
}  // namespace technique

using Technique =
    std::variant<technique::FullFineTune, technique::PromptTuning, technique::SoftPrompt,
                 technique::WrappedSoftPrompt, technique::SoftPlusHardPrompt,
                 technique::PrefixTuning, technique::PrefixPlusLora>;

struct AdapterSpec {
  Technique technique = technique::FullFineTune{};
  model::FreezePolicy freeze = model::FreezePolicy::train_all();

  // Throws ConfigError if the variant's own invariants are violated.
  void validate() const;
  std::string kind() const;
  // True iff the variant classifies through [MASK] and a verbalizer.
  bool uses_verbalizer() const;
  const HardPromptSpec* hard_prompt() const;
};

// Virtual tokens placed before ([pre]) and after ([post]) the embedded text.
struct SoftPromptBank {
  ad::Tensor pre;   // [p_pre, d_model] or undefined
  ad::Tensor post;  // [p_post, d_model] or undefined

  // Rows copied from the embedding rows of random non-reserved tokens.
  static SoftPromptBank create(const SoftPromptSpec& spec, const ad::Tensor& token_embeddings,
                               Rng& rng);
  std::size_t p_pre() const { return pre.defined() ? pre.rows() : 0; }
  std::size_t p_post() const { return post.defined() ? post.rows() : 0; }
  model::ParameterList parameters() const;
};

struct SoftPromptResult {
  ad::Tensor sequence;  // [p_pre + n + p_post, d_model]
  std::size_t shift;    // offset added to every text position (== p_pre)
};

SoftPromptResult apply_soft_prompt(const SoftPromptBank& bank, const ad::Tensor& embedded,
                                   std::size_t max_positions);

struct SoftPlusHardResult {
  ad::Tensor sequence;
  std::size_t mask_index;
};

// Soft tokens, then the embedded text, then the embedded hard prompt. The
// example must already be encoded with its template.
SoftPlusHardResult apply_soft_plus_hard(const SoftPromptBank& bank,
                                        const text::EncodedExample& example,
                                        const model::EncoderModel& model);

/// Per-layer trainable key/value prefixes.
class PrefixBank {
 public:
  PrefixBank(const PrefixSpec& spec, const model::EncoderConfig& config, Rng& rng);

  std::size_t prefix_len() const { return spec_.prefix_len; }
  // One (key, value) pair per layer, computed through the MLP when enabled.
  std::vector<model::LayerPrefix> materialize() const;
  model::ParameterList parameters() const;

 private:
  PrefixSpec spec_;
  std::size_t n_layers_, d_model_;
  std::vector<model::LayerPrefix> direct_;
  // Reparameterization: raw[L, d] -> tanh(linear) -> linear -> [L, 2 * layers * d].
  ad::Tensor raw_, mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
};

struct LoraPair {
  model::Projection target;
  ad::Tensor a;  // [rank, d_in]
  ad::Tensor b;  // [d_out, rank], zero at init
};

// W + (alpha / rank) * B * A.
ad::Tensor apply_lora(const ad::Tensor& weight, const ad::Tensor& a, const ad::Tensor& b,
                      double alpha, std::size_t rank);

class LoraBank {
 public:
  LoraBank(const LoraSpec& spec, const model::EncoderConfig& config, Rng& rng);

  const LoraSpec& spec() const { return spec_; }
  const std::vector<std::vector<LoraPair>>& layers() const { return layers_; }
  // Effective projection weights for every layer (undefined for untouched ones).
  std::vector<std::array<ad::Tensor, 4>> effective_weights(const model::EncoderModel& model) const;
  model::ParameterList parameters() const;

 private:
  LoraSpec spec_;
  std::vector<std::vector<LoraPair>> layers_;
};

struct ParameterReport {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double fraction = 0.0;
  // Itemized: encoder body, MLM head, adapter-owned, task head.
  std::size_t body_total = 0, body_trainable = 0;
  std::size_t mlm_head_total = 0, mlm_head_trainable = 0;
  std::size_t adapter_total = 0, adapter_trainable = 0;
  std::size_t task_head_total = 0, task_head_trainable = 0;
  // (trainable - heads) / (total - heads), heads = MLM head + task head.
  double fraction_excluding_heads = 0.0;
};

/// An encoder with one attached adapter: the unit that gets trained,
/// checkpointed and evaluated.
class AdaptedModel : public model::Classifier {
 public:
  AdaptedModel(model::EncoderModel encoder, AdapterSpec spec, text::Vocabulary vocab,
               std::vector<std::string> labels, std::size_t max_length, std::uint64_t seed);

  const std::vector<std::string>& labels() const override { return labels_; }
  text::EncodedExample encode(const text::RawExample& example) const override;
  ad::Tensor logits(const text::EncodedExample& example,
                    const model::ForwardOptions& opts) const override;
  model::ParameterList parameters() const override;

  // Forward pass with this adapter's injections; hidden states of the full
  // (possibly extended) sequence.
  model::EncoderOutput forward(const text::EncodedExample& example,
                               const model::ForwardOptions& opts) const;

  const model::EncoderModel& encoder() const { return encoder_; }
  model::EncoderModel& encoder() { return encoder_; }
  const AdapterSpec& spec() const { return spec_; }
  const text::Vocabulary& vocab() const { return vocab_; }
  std::size_t max_length() const { return max_length_; }

  // Parameters owned by the adapter (soft tokens, prefixes, LoRA factors).
  model::ParameterList adapter_parameters() const;
  model::ParameterList task_head_parameters() const;
  // Everything, for full checkpoints: encoder registry + adapter + task head.
  model::ParameterList all_parameters() const;

  ParameterReport parameter_report() const;

  const SoftPromptBank* soft_prompt() const { return soft_ ? &*soft_ : nullptr; }
  const PrefixBank* prefix() const { return prefix_ ? &*prefix_ : nullptr; }
  const LoraBank* lora() const { return lora_ ? &*lora_ : nullptr; }

 private:
  model::Injections injections() const;

  model::EncoderModel encoder_;
  AdapterSpec spec_;
  text::Vocabulary vocab_;
  std::vector<std::string> labels_;
  std::size_t max_length_;
  std::vector<int> verbalizer_ids_;
  std::optional<SoftPromptBank> soft_;
  std::optional<PrefixBank> prefix_;
  std::optional<LoraBank> lora_;
  std::optional<model::LinearHead> head_;
};

ParameterReport trainable_parameter_report(const AdaptedModel& model);

}  // namespace peftlab::peft
