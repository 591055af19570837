#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peftlab/adapters.hpp"
#include "peftlab/classifier.hpp"
#include "peftlab/encoder.hpp"
#include "peftlab/metrics.hpp"
#include "peftlab/text.hpp"
#include "peftlab/train.hpp"

namespace peftlab::pos {

class PosTagset {
 public:
  explicit PosTagset(std::vector<std::string> tags);
  // ADJ ADP ADV AUX CCONJ DET INTJ NOUN NUM PART PRON PROPN PUNCT SCONJ SYM VERB X
  static PosTagset universal();

  std::size_t size() const { return tags_.size(); }
  const std::string& tag(int id) const { return tags_.at(static_cast<std::size_t>(id)); }
  // Throws DataError for an unknown tag.
  int id(std::string_view tag) const;
  const std::vector<std::string>& tags() const { return tags_; }

  bool operator==(const PosTagset&) const = default;

 private:
  std::vector<std::string> tags_;
};

struct PosExample {
  std::vector<std::string> tokens;
  std::vector<int> tags;

  bool operator==(const PosExample&) const = default;
};

// Throws DataError on a token/tag length mismatch or an out-of-range tag.
void validate_example(const PosExample& ex, const PosTagset& tagset);

// Fixed word -> universal tag table covering the synthetic corpora and the
// prompt fixtures; unknown words fall back to shape rules.
std::string lexicon_tag(std::string_view word);

// Sentences from the three synthetic classification schemas, tagged by the lexicon.
std::vector<PosExample> synthetic_pos_corpus(std::size_t n_sentences, std::uint64_t seed,
                                             const PosTagset& tagset = PosTagset::universal());

// token<TAB>tag per line, blank line between sentences.
std::vector<PosExample> load_pos_corpus(const std::filesystem::path& path, const PosTagset& tagset);
void save_pos_corpus(const std::filesystem::path& path, std::span<const PosExample> corpus,
                     const PosTagset& tagset);

/// Encoder with a per-token classification head.
struct PosTagger {
  model::EncoderModel encoder;
  model::LinearHead head;
  PosTagset tagset;
};

PosTagger make_pos_tagger(model::EncoderModel encoder, PosTagset tagset, std::uint64_t seed);

struct EncodedPos {
  std::vector<int> ids;   // [CLS] + tokens, truncated to max_positions
  std::vector<int> tags;  // one per token kept
};

EncodedPos encode_pos(const PosExample& ex, const text::Vocabulary& vocab, std::size_t max_positions);

// Tag logits [n_tokens, n_tags] for the token rows (the [CLS] row is skipped).
ad::Tensor tag_logits(const PosTagger& tagger, const EncodedPos& ex, const model::ForwardOptions& opts);

struct PosTrainResult {
  std::vector<double> epoch_loss;
};

// Per-token cross-entropy over every encoder parameter and the head.
PosTrainResult train_pos_tagger(PosTagger& tagger, const text::Vocabulary& vocab,
                                std::span<const PosExample> corpus, const train::TrainConfig& cfg);

double tag_accuracy(const PosTagger& tagger, const text::Vocabulary& vocab,
                    std::span<const PosExample> corpus);

struct TargetResult {
  peft::AdaptedModel model;
  train::TrainResult train;
  metrics::MetricsReport test;
};

// Drops the POS head and trains the target task through `adapter` on top of
// the POS-tuned encoder.
TargetResult intermediate_then_target(model::EncoderModel pos_encoder, const peft::AdapterSpec& adapter,
                                      const text::Vocabulary& vocab, std::vector<std::string> labels,
                                      std::span<const text::RawExample> train_set,
                                      std::span<const text::RawExample> val_set,
                                      std::span<const text::RawExample> test_set,
                                      const train::TrainConfig& cfg, std::size_t max_length,
                                      std::uint64_t adapter_seed);

enum class FusionMode { Concat, Sum, Mean };
std::string_view to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view name);

/// Two encoders read the same input; their pooled [CLS] states are fused and
/// classified. encoder_b (the POS-tuned one) is frozen unless train_both.
class FusionModel : public model::Classifier {
 public:
  FusionModel(model::EncoderModel encoder_a, model::EncoderModel encoder_b, text::Vocabulary vocab,
              std::vector<std::string> labels, FusionMode mode, std::size_t max_length,
              std::uint64_t seed, model::FreezePolicy policy_a = model::FreezePolicy::train_all(),
              bool train_both = false);

  const std::vector<std::string>& labels() const override { return labels_; }
  text::EncodedExample encode(const text::RawExample& example) const override;
  ad::Tensor logits(const text::EncodedExample& example, const model::ForwardOptions& opts) const override;
  model::ParameterList parameters() const override;

  // Fused representation [1, classifier_input_width()].
  ad::Tensor fused(const text::EncodedExample& example, const model::ForwardOptions& opts) const;
  std::size_t classifier_input_width() const { return head_.in_features(); }

  FusionMode mode() const { return mode_; }
  const model::EncoderModel& encoder_a() const { return a_; }
  const model::EncoderModel& encoder_b() const { return b_; }
  const model::LinearHead& head() const { return head_; }
  const text::Vocabulary& vocab() const { return vocab_; }
  // Body parameters of both encoders (prefixed "a." / "b.") and the head.
  model::ParameterList all_parameters() const;

 private:
  model::EncoderModel a_, b_;
  text::Vocabulary vocab_;
  std::vector<std::string> labels_;
  FusionMode mode_;
  std::size_t max_length_;
  model::LinearHead head_;
};

}  // namespace peftlab::pos
