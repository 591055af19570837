#include "peftlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "peftlab/errors.hpp"
#include "peftlab/log.hpp"
#include "peftlab/ops.hpp"

namespace peftlab::train {

void ScheduleConfig::validate() const {
  if (!(lr_max > lr_min) || !(lr_min > 0.0)) {
    throw ConfigError("schedule needs lr_max > lr_min > 0 (got " + std::to_string(lr_max) + ", " +
                      std::to_string(lr_min) + ")");
  }
  if (total_steps < 1) throw ConfigError("schedule needs total_steps >= 1");
}

double cosine_lr(std::size_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  // Endpoints are returned as configured rather than through the cosine.
  if (step == 0) return cfg.lr_max;
  if (step >= cfg.total_steps) return cfg.lr_min;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  const double lr = cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
  return std::clamp(lr, cfg.lr_min, cfg.lr_max);
}

std::size_t total_steps(std::size_t epochs, std::size_t n_train, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  return epochs * ((n_train + batch_size - 1) / batch_size);
}

AdamW::AdamW(const model::ParameterList& params, AdamWConfig cfg) : cfg_(cfg) {
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ConfigError("AdamW betas must lie in [0, 1)");
  }
  if (!(cfg.eps > 0.0) || cfg.weight_decay < 0.0 || cfg.clip_norm < 0.0) {
    throw ConfigError("AdamW needs eps > 0, weight_decay >= 0 and clip_norm >= 0");
  }
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    const auto n = p.tensor.numel();
    slots_.push_back({p.name, p.tensor, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

void AdamW::step(double lr) {
  for (const auto& s : slots_) {
    if (!s.param.has_grad()) throw TrainingError("trainable parameter '" + s.name + "' has no gradient");
  }
  double clip_scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& s : slots_) {
      for (double g : s.param.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (auto& s : slots_) {
    auto theta = s.param.mutable_data();
    const auto grad = s.param.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i] * clip_scale;
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = s.m[i] / bc1;
      const double v_hat = s.v[i] / bc2;
      theta[i] *= decay;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) s.param.clear_grad();
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  ScheduleConfig{lr_max, lr_min, 1}.validate();
}

ad::Tensor batch_loss(const model::Classifier& model, std::span<const text::EncodedExample> batch,
                      const model::ForwardOptions& opts) {
  if (batch.empty()) throw DimensionError("empty batch");
  std::vector<ad::Tensor> rows;
  std::vector<int> targets;
  for (const auto& ex : batch) {
    rows.push_back(model.logits(ex, opts));
    targets.push_back(ex.label_id);
  }
  return ad::cross_entropy(ad::concat(rows, 0), targets);
}

std::vector<int> predict(const model::Classifier& model, std::span<const text::EncodedExample> examples) {
  ad::NoGradGuard guard;
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const ad::Tensor logits = model.logits(ex, {});
    const auto row = logits.data();
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

metrics::MetricsReport evaluate(const model::Classifier& model,
                                std::span<const text::EncodedExample> examples) {
  if (examples.empty()) throw DataError("cannot evaluate on an empty dataset");
  const auto pred = predict(model, examples);
  std::vector<int> truth;
  for (const auto& ex : examples) truth.push_back(ex.label_id);
  return metrics::make_report(model.labels(),
                              metrics::ConfusionMatrix::from_predictions(model.labels().size(), truth, pred));
}

std::vector<std::vector<double>> snapshot(const model::ParameterList& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void restore(const model::ParameterList& params, const std::vector<std::vector<double>>& values) {
  if (params.size() != values.size()) throw DimensionError("snapshot does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.storage()->data.data();
    std::copy(values[i].begin(), values[i].end(), dst);
  }
}

TrainResult train_classifier(model::Classifier& model, std::span<const text::EncodedExample> train_set,
                             std::span<const text::EncodedExample> val_set, const TrainConfig& cfg,
                             const EpochCallback& on_epoch) {
  cfg.validate();
  TrainResult result;
  if (cfg.epochs == 0) return result;
  if (train_set.empty()) throw DataError("training set is empty");
  if (val_set.empty()) throw DataError("validation set is empty");

  model::ParameterList trainable;
  for (const auto& p : model.parameters()) {
    if (p.tensor.requires_grad()) trainable.push_back(p);
  }
  if (trainable.empty()) throw TrainingError("model has no trainable parameters");
  AdamW opt(trainable, cfg.adamw);
  const ScheduleConfig sched{cfg.lr_max, cfg.lr_min,
                             total_steps(cfg.epochs, train_set.size(), cfg.batch_size)};

  Rng shuffle_rng(derive_seed(cfg.seed, fnv1a("shuffle")));
  Rng dropout_rng(derive_seed(cfg.seed, fnv1a("dropout")));
  const model::ForwardOptions train_opts{true, &dropout_rng, false};

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::vector<double>> best;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    double lr = cfg.lr_max;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<text::EncodedExample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(train_set[order[i]]);
      }
      lr = cosine_lr(step++, sched);
      ad::Tape tape;
      const ad::Tensor loss = batch_loss(model, batch, train_opts);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite training loss in epoch " + std::to_string(epoch));
      }
      ad::backward(loss);
      opt.step(lr);
      opt.zero_grad();
      loss_sum += value;
      ++n_batches;
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n_batches), evaluate(model, val_set).f1_micro, lr};
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (result.best_epoch == 0 || rec.val_f1_micro > result.best_val_f1_micro) {
      result.best_epoch = epoch;
      result.best_val_f1_micro = rec.val_f1_micro;
      best = snapshot(trainable);
    }
  }
  restore(trainable, best);
  return result;
}

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["val_f1_micro"] = r.val_f1_micro;
  j["lr_last"] = r.lr_last;
  return j.dump();
}

void write_epoch_log(const std::filesystem::path& path, std::span<const EpochRecord> log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write epoch log " + path.string());
  for (const auto& r : log) out << epoch_record_json(r) << '\n';
  if (!out) throw DataError("failed writing epoch log " + path.string());
}

void MlmConfig::validate() const {
  if (mask_rate < 0.0 || mask_rate > 1.0) throw ConfigError("mask_rate must lie in [0, 1]");
  if (replace_mask < 0.0 || replace_random < 0.0 || replace_mask + replace_random > 1.0) {
    throw ConfigError("mask/random replacement shares must be non-negative and sum to at most 1");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  ScheduleConfig{lr_max, lr_min, 1}.validate();
}

MaskedSequence mask_tokens(std::span<const int> ids, std::size_t vocab_size, const MlmConfig& cfg,
                           Rng& rng) {
  const auto reserved = static_cast<std::size_t>(text::Vocabulary::kNumReserved);
  MaskedSequence out;
  out.input.assign(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < text::Vocabulary::kNumReserved) continue;
    if (!rng.bernoulli(cfg.mask_rate)) continue;
    out.positions.push_back(static_cast<int>(i));
    out.targets.push_back(ids[i]);
    const double u = rng.uniform();
    if (u < cfg.replace_mask) {
      out.input[i] = text::Vocabulary::kMask;
    } else if (u < cfg.replace_mask + cfg.replace_random && vocab_size > reserved) {
      out.input[i] = static_cast<int>(reserved + rng.below(vocab_size - reserved));
    }
  }
  return out;
}

ad::Tensor mlm_batch_loss(const model::EncoderModel& model, std::span<const MaskedSequence> batch,
                          const model::ForwardOptions& opts) {
  std::vector<ad::Tensor> rows;
  std::vector<int> targets;
  for (const auto& seq : batch) {
    if (seq.positions.empty()) continue;
    const auto out = model.forward(seq.input, {}, opts);
    rows.push_back(model.mlm_logits(out.hidden, seq.positions));
    targets.insert(targets.end(), seq.targets.begin(), seq.targets.end());
  }
  if (rows.empty()) return {};
  return ad::cross_entropy(ad::concat(rows, 0), targets);
}

double mlm_heldout_loss(const model::EncoderModel& model, std::span<const MaskedSequence> masked) {
  ad::NoGradGuard guard;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& seq : masked) {
    if (seq.positions.empty()) continue;
    const auto loss = mlm_batch_loss(model, std::span(&seq, 1), {});
    total += loss.item() * static_cast<double>(seq.positions.size());
    count += seq.positions.size();
  }
  if (count == 0) throw DataError("held-out MLM set has no masked positions");
  return total / static_cast<double>(count);
}

MlmResult mlm_pretrain(model::EncoderModel& model, std::span<const std::vector<int>> corpus,
                       std::span<const std::vector<int>> heldout, const MlmConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw DataError("MLM pretraining corpus is empty");
  const std::size_t vocab = model.config().vocab_size;

  std::vector<MaskedSequence> heldout_masked;
  Rng heldout_rng(derive_seed(cfg.seed, fnv1a("heldout-mask")));
  for (const auto& ids : heldout) heldout_masked.push_back(mask_tokens(ids, vocab, cfg, heldout_rng));
  const bool track = std::any_of(heldout_masked.begin(), heldout_masked.end(),
                                 [](const MaskedSequence& s) { return !s.positions.empty(); });

  MlmResult result;
  if (track) result.heldout_loss.push_back(mlm_heldout_loss(model, heldout_masked));
  if (cfg.epochs == 0) return result;

  AdamW opt(model.parameters(), cfg.adamw);
  const ScheduleConfig sched{cfg.lr_max, cfg.lr_min, total_steps(cfg.epochs, corpus.size(), cfg.batch_size)};
  Rng shuffle_rng(derive_seed(cfg.seed, fnv1a("mlm-shuffle")));
  Rng mask_rng(derive_seed(cfg.seed, fnv1a("mlm-mask")));
  Rng dropout_rng(derive_seed(cfg.seed, fnv1a("mlm-dropout")));
  const model::ForwardOptions opts{true, &dropout_rng, false};

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<MaskedSequence> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(mask_tokens(corpus[order[i]], vocab, cfg, mask_rng));
      }
      const double lr = cosine_lr(step++, sched);
      ad::Tape tape;
      const ad::Tensor loss = mlm_batch_loss(model, batch, opts);
      if (!loss.defined()) {
        ++result.skipped_batches;
        warn("MLM batch without masked positions skipped (epoch " + std::to_string(epoch) + ")");
        continue;
      }
      if (!std::isfinite(loss.item())) {
        throw TrainingError("non-finite MLM loss in epoch " + std::to_string(epoch));
      }
      ad::backward(loss);
      opt.step(lr);
      opt.zero_grad();
      loss_sum += loss.item();
      ++n;
    }
    result.train_loss.push_back(n == 0 ? std::numeric_limits<double>::quiet_NaN()
                                       : loss_sum / static_cast<double>(n));
    if (track) result.heldout_loss.push_back(mlm_heldout_loss(model, heldout_masked));
  }
  return result;
}

}  // namespace peftlab::train
