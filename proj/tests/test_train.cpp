#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "peftlab/adapters.hpp"
#include "peftlab/errors.hpp"
#include "peftlab/fixtures.hpp"
#include "peftlab/ops.hpp"
#include "peftlab/train.hpp"
#include "support.hpp"

using namespace peftlab;
using namespace peftlab::train;
using text::DatasetTag;

namespace {

struct Setup {
  text::Vocabulary vocab;
  std::vector<text::RawExample> raw;
  model::EncoderConfig cfg;
};

Setup setup(std::size_t per_class = 12) {
  Setup s;
  s.raw = text::generate_synthetic(DatasetTag::RHMD, per_class, 21);
  auto forced = peft::fixture_words();
  s.vocab = text::build_vocab(s.raw, 1, forced);
  s.cfg.n_layers = 1;
  s.cfg.n_heads = 2;
  s.cfg.d_model = 16;
  s.cfg.d_ff = 32;
  s.cfg.vocab_size = s.vocab.size();
  s.cfg.max_positions = 48;
  s.cfg.dropout_rate = 0.1;
  return s;
}

peft::AdaptedModel classifier(const Setup& s, std::uint64_t seed = 1) {
  return peft::AdaptedModel(model::EncoderModel(s.cfg, seed), peft::AdapterSpec{}, s.vocab,
                            text::label_set(DatasetTag::RHMD), 40, seed);
}

std::vector<text::EncodedExample> encode_all(const model::Classifier& m, const std::vector<text::RawExample>& raw) {
  std::vector<text::EncodedExample> out;
  for (const auto& r : raw) out.push_back(m.encode(r));
  return out;
}

ad::Tensor scalar_param(double v) { return ad::Tensor::from_data({1}, {v}).set_requires_grad(true); }

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("cosine schedule endpoints and shape") {
    const ScheduleConfig cfg{3e-5, 1e-8, 100};
    CHECK(cosine_lr(0, cfg) == 3e-5);
    CHECK(cosine_lr(100, cfg) == 1e-8);
    CHECK(cosine_lr(500, cfg) == 1e-8);
    // Halfway the cosine term vanishes, leaving the average of the endpoints.
    CHECK(std::abs(cosine_lr(50, cfg) - (3e-5 + 1e-8) / 2.0) < 1e-12);
    // Oracle: the closed form evaluated independently at a few interior steps.
    for (std::size_t t : {1u, 17u, 73u, 99u}) {
      const double expect = 1e-8 + (3e-5 - 1e-8) * (1.0 + std::cos(std::numbers::pi * t / 100.0)) / 2.0;
      CHECK(cosine_lr(t, cfg) == doctest::Approx(expect).epsilon(1e-12));
    }
    double prev = cosine_lr(0, cfg);
    for (std::size_t t = 1; t <= 100; ++t) {
      const double lr = cosine_lr(t, cfg);
      CHECK(lr <= prev);
      CHECK(lr >= cfg.lr_min);
      prev = lr;
    }
    CHECK_THROWS_AS(cosine_lr(0, ScheduleConfig{1e-8, 3e-5, 10}), ConfigError);
    CHECK_THROWS_AS(cosine_lr(0, ScheduleConfig{3e-5, 1e-8, 0}), ConfigError);
    CHECK(total_steps(5, 300, 8) == 5 * 38);
    CHECK(total_steps(0, 300, 8) == 0);
  }

  TEST_CASE("AdamW closed forms") {
    SUBCASE("first step moves by about lr") {
      auto p = scalar_param(1.0);
      AdamW opt({{"p", p}}, {0.9, 0.999, 1e-8, 0.0, 0.0});
      p.mutable_grad()[0] = 0.5;
      opt.step(0.1);
      CHECK(p.data()[0] == 1.0 - 0.1 * 0.5 / (0.5 + 1e-8));
      CHECK(std::abs(p.data()[0] - 0.9) < 1e-8);
      CHECK(opt.steps() == 1);
    }
    SUBCASE("decay only") {
      auto p = scalar_param(2.0);
      AdamW opt({{"p", p}}, {0.9, 0.999, 1e-8, 0.01, 0.0});
      p.mutable_grad()[0] = 0.0;
      opt.step(0.1);
      CHECK(p.data()[0] == 2.0 * (1.0 - 0.1 * 0.01));
    }
    SUBCASE("zero gradient and no decay leaves the parameter") {
      auto p = scalar_param(-3.25);
      AdamW opt({{"p", p}}, {0.9, 0.999, 1e-8, 0.0, 0.0});
      for (int i = 0; i < 5; ++i) {
        p.mutable_grad()[0] = 0.0;
        opt.step(0.5);
      }
      CHECK(p.data()[0] == -3.25);
    }
    SUBCASE("frozen parameters get no state") {
      auto p = scalar_param(1.0);
      auto q = ad::Tensor::from_data({2}, {1.0, 2.0});
      AdamW opt({{"p", p}, {"q", q}}, {});
      REQUIRE(opt.slots().size() == 1);
      CHECK(opt.slots()[0].name == "p");
    }
    SUBCASE("missing gradient is a training error") {
      auto p = scalar_param(1.0);
      AdamW opt({{"p", p}}, {});
      CHECK_THROWS_AS(opt.step(0.1), TrainingError);
    }
    SUBCASE("gradient clipping scales the moments") {
      auto p = ad::Tensor::from_data({2}, {0.0, 0.0}).set_requires_grad(true);
      AdamW opt({{"p", p}}, {0.9, 0.999, 1e-8, 0.0, 1.0});
      p.mutable_grad()[0] = 3.0;
      p.mutable_grad()[1] = 4.0;
      opt.step(0.1);
      CHECK(opt.slots()[0].m[0] == doctest::Approx(0.1 * 0.6).epsilon(1e-14));
      CHECK(opt.slots()[0].m[1] == doctest::Approx(0.1 * 0.8).epsilon(1e-14));
    }
    CHECK_THROWS_AS(AdamW({}, {1.0, 0.999, 1e-8, 0.0, 0.0}), ConfigError);
  }

  TEST_CASE("batch loss ignores example order") {
    const auto s = setup(4);
    const auto m = classifier(s);
    auto batch = encode_all(m, s.raw);
    ad::NoGradGuard ng;
    const double a = batch_loss(m, batch, {}).item();
    std::reverse(batch.begin(), batch.end());
    const double b = batch_loss(m, batch, {}).item();
    CHECK(std::abs(a - b) < 1e-12);
    CHECK_THROWS_AS(batch_loss(m, std::span<const text::EncodedExample>{}, {}), DimensionError);
  }

  TEST_CASE("training is seed-deterministic and restores the best epoch") {
    const auto s = setup();
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 6;
    cfg.seed = 5;
    cfg.lr_max = 1e-3;
    auto run = [&] {
      auto m = classifier(s);
      const auto data = encode_all(m, s.raw);
      const std::span<const text::EncodedExample> all(data);
      const auto r = train_classifier(m, all.subspan(0, 24), all.subspan(24), cfg);
      return std::pair{r, testsupport::copy_values(m.parameters().front().tensor)};
    };
    const auto [r1, w1] = run();
    const auto [r2, w2] = run();
    CHECK(r1.log == r2.log);
    CHECK(testsupport::bitwise_equal(w1, w2));
    REQUIRE(r1.log.size() == 3);
    CHECK(r1.best_epoch >= 1);
    double best = 0.0;
    for (const auto& rec : r1.log) best = std::max(best, rec.val_f1_micro);
    CHECK(r1.best_val_f1_micro == best);
    // Earliest epoch wins ties.
    for (const auto& rec : r1.log) {
      if (rec.epoch < r1.best_epoch) CHECK(rec.val_f1_micro < best);
    }

    auto m = classifier(s);
    const auto data = encode_all(m, s.raw);
    const std::span<const text::EncodedExample> all(data);
    const auto r = train_classifier(m, all.subspan(0, 24), all.subspan(24), cfg);
    CHECK(evaluate(m, all.subspan(24)).f1_micro == r.best_val_f1_micro);
  }

  TEST_CASE("zero epochs leaves the model untouched") {
    const auto s = setup(4);
    auto m = classifier(s);
    const auto before = snapshot(m.parameters());
    const auto data = encode_all(m, s.raw);
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto r = train_classifier(m, data, data, cfg);
    CHECK(r.log.empty());
    CHECK(r.best_epoch == 0);
    CHECK(snapshot(m.parameters()) == before);
    cfg.epochs = 1;
    CHECK_THROWS_AS(train_classifier(m, std::span<const text::EncodedExample>{}, data, cfg), DataError);
  }

  TEST_CASE("epoch log lines") {
    const EpochRecord r{2, 0.5, 0.75, 1e-5};
    CHECK(epoch_record_json(r) == R"({"epoch":2,"train_loss":0.5,"val_f1_micro":0.75,"lr_last":1e-05})");
  }

  TEST_CASE("mask_tokens") {
    MlmConfig cfg;
    Rng rng(3);
    std::vector<int> ids = {text::Vocabulary::kCls};
    for (int i = 0; i < 4000; ++i) ids.push_back(5 + i % 40);
    const auto m = mask_tokens(ids, 45, cfg, rng);
    CHECK(m.positions.size() == m.targets.size());
    for (std::size_t i = 0; i < m.positions.size(); ++i) {
      CHECK(m.positions[i] != 0);
      CHECK(m.targets[i] == ids[static_cast<std::size_t>(m.positions[i])]);
    }
    const double rate = static_cast<double>(m.positions.size()) / 4000.0;
    CHECK(rate == doctest::Approx(0.15).epsilon(0.15));
    std::size_t masked = 0;
    for (int p : m.positions) masked += m.input[static_cast<std::size_t>(p)] == text::Vocabulary::kMask;
    CHECK(static_cast<double>(masked) / static_cast<double>(m.positions.size()) ==
          doctest::Approx(0.8).epsilon(0.1));
    // Unchosen positions are untouched.
    std::vector<bool> chosen(ids.size(), false);
    for (int p : m.positions) chosen[static_cast<std::size_t>(p)] = true;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!chosen[i]) CHECK(m.input[i] == ids[i]);
    }

    cfg.mask_rate = 0.0;
    CHECK(mask_tokens(ids, 45, cfg, rng).positions.empty());
    cfg.mask_rate = 1.0;
    cfg.replace_mask = 1.0;
    cfg.replace_random = 0.0;
    const auto all = mask_tokens(ids, 45, cfg, rng);
    CHECK(all.positions.size() == 4000);
    CHECK(all.input[0] == text::Vocabulary::kCls);
  }

  TEST_CASE("MLM loss only sees masked positions") {
    const auto s = setup(4);
    const model::EncoderModel enc(s.cfg, 2);
    MaskedSequence seq;
    seq.input = {2, 7, 1, 9, 1};
    seq.positions = {2, 4};
    seq.targets = {8, 10};
    ad::NoGradGuard ng;
    const double base = mlm_batch_loss(enc, std::span(&seq, 1), {}).item();
    // Changing a target outside the masked set has no effect; the loss is the
    // mean cross-entropy of the two masked rows.
    const auto hidden = enc.forward(seq.input).hidden;
    const auto logits = enc.mlm_logits(hidden, seq.positions);
    const double oracle = ad::cross_entropy(logits, seq.targets).item();
    CHECK(base == oracle);
    MaskedSequence empty{seq.input, {}, {}};
    CHECK_FALSE(mlm_batch_loss(enc, std::span(&empty, 1), {}).defined());
  }

  TEST_CASE("MLM pretraining") {
    const auto s = setup(20);
    std::vector<std::vector<int>> corpus, heldout;
    for (std::size_t i = 0; i < s.raw.size(); ++i) {
      auto ids = text::encode_plain(s.raw[i], s.vocab, 0, 48).token_ids;
      (i % 6 == 0 ? heldout : corpus).push_back(std::move(ids));
    }
    auto cfg_enc = s.cfg;
    cfg_enc.dropout_rate = 0.0;
    MlmConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 4;

    model::EncoderModel enc(cfg_enc, 3);
    const auto r = mlm_pretrain(enc, corpus, heldout, cfg);
    REQUIRE(r.heldout_loss.size() == 6);
    REQUIRE(r.train_loss.size() == 5);
    CHECK(r.heldout_loss.back() < r.heldout_loss.front());

    model::EncoderModel again(cfg_enc, 3);
    const auto r2 = mlm_pretrain(again, corpus, heldout, cfg);
    CHECK(r2.heldout_loss == r.heldout_loss);

    cfg.mask_rate = 0.0;
    cfg.epochs = 2;
    cfg.batch_size = 10;
    model::EncoderModel idle(cfg_enc, 3);
    const auto before = snapshot(idle.parameters());
    const auto skipped = mlm_pretrain(idle, corpus, heldout, cfg);
    CHECK(skipped.skipped_batches == 2 * ((corpus.size() + 9) / 10));
    CHECK(skipped.heldout_loss.empty());
    CHECK(snapshot(idle.parameters()) == before);
    CHECK_THROWS_AS(mlm_pretrain(idle, std::span<const std::vector<int>>{}, heldout, cfg), DataError);
  }
}
