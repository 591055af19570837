#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "peftlab/classifier.hpp"
#include "peftlab/encoder.hpp"
#include "peftlab/metrics.hpp"
#include "peftlab/text.hpp"

namespace peftlab::train {

struct ScheduleConfig {
  double lr_max = 3e-5;
  double lr_min = 1e-8;
  std::size_t total_steps = 1;

  void validate() const;  // lr_max > lr_min > 0, total_steps >= 1
};

// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / T)) / 2; steps past T
// stay at lr_min.
double cosine_lr(std::size_t step, const ScheduleConfig& cfg);

// epochs * ceil(n_train / batch_size)
std::size_t total_steps(std::size_t epochs, std::size_t n_train, std::size_t batch_size);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.001;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

/// AdamW with decoupled weight decay. State is allocated only for the
/// parameters that are trainable when the optimizer is built.
class AdamW {
 public:
  struct Slot {
    std::string name;
    ad::Tensor param;
    std::vector<double> m, v;
  };

  AdamW(const model::ParameterList& params, AdamWConfig cfg);

  // theta <- theta * (1 - lr * wd), then the bias-corrected Adam update.
  // Throws TrainingError if a trainable parameter has no gradient.
  void step(double lr);
  void zero_grad();

  std::size_t steps() const { return t_; }
  const std::vector<Slot>& slots() const { return slots_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t epochs = 5;
  std::uint64_t seed = 0;
  double lr_max = 3e-5;
  double lr_min = 1e-8;
  AdamWConfig adamw;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_f1_micro = 0.0;
  double lr_last = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_f1_micro = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mean cross-entropy of a batch; records on the active tape.
ad::Tensor batch_loss(const model::Classifier& model, std::span<const text::EncodedExample> batch,
                      const model::ForwardOptions& opts);

std::vector<int> predict(const model::Classifier& model, std::span<const text::EncodedExample> examples);

metrics::MetricsReport evaluate(const model::Classifier& model,
                                std::span<const text::EncodedExample> examples);

// Seeded epoch loop with validation-F1-micro model selection. The weights of
// the best epoch (earliest on ties) are restored before returning.
TrainResult train_classifier(model::Classifier& model, std::span<const text::EncodedExample> train_set,
                             std::span<const text::EncodedExample> val_set, const TrainConfig& cfg,
                             const EpochCallback& on_epoch = {});

void write_epoch_log(const std::filesystem::path& path, std::span<const EpochRecord> log);
std::string epoch_record_json(const EpochRecord& r);

struct MlmConfig {
  double mask_rate = 0.15;
  double replace_mask = 0.8;    // share of chosen positions set to [MASK]
  double replace_random = 0.1;  // share set to a random token; the rest kept
  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double lr_max = 1e-3;
  double lr_min = 1e-8;
  AdamWConfig adamw;

  void validate() const;
};

struct MaskedSequence {
  std::vector<int> input;
  std::vector<int> positions;  // masked positions
  std::vector<int> targets;    // original ids at those positions
};

// Chooses each non-reserved position with probability mask_rate and applies
// the mask/random/keep split.
MaskedSequence mask_tokens(std::span<const int> ids, std::size_t vocab_size, const MlmConfig& cfg,
                           Rng& rng);

// Mean MLM cross-entropy over the masked positions of a batch. Undefined
// tensor if no position was masked.
ad::Tensor mlm_batch_loss(const model::EncoderModel& model, std::span<const MaskedSequence> batch,
                          const model::ForwardOptions& opts);

struct MlmResult {
  std::vector<double> train_loss;      // per epoch
  std::vector<double> heldout_loss;    // index 0 = before training, then per epoch
  std::size_t skipped_batches = 0;     // batches with nothing masked
};

// Held-out loss uses one fixed masking of `heldout` so epochs are comparable.
// Throws DataError on an empty corpus.
MlmResult mlm_pretrain(model::EncoderModel& model, std::span<const std::vector<int>> corpus,
                       std::span<const std::vector<int>> heldout, const MlmConfig& cfg);

double mlm_heldout_loss(const model::EncoderModel& model, std::span<const MaskedSequence> masked);

// Copies of the current parameter values, for best-epoch restore.
std::vector<std::vector<double>> snapshot(const model::ParameterList& params);
void restore(const model::ParameterList& params, const std::vector<std::vector<double>>& values);

}  // namespace peftlab::train
