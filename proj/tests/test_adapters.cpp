#include <cmath>
#include <set>

#include "doctest.h"
#include "peftlab/adapters.hpp"
#include "peftlab/checkpoint.hpp"
#include "peftlab/errors.hpp"
#include "peftlab/fixtures.hpp"
#include "peftlab/ops.hpp"
#include "support.hpp"

using namespace peftlab;
using namespace peftlab::peft;
using text::DatasetTag;
using text::RawExample;

namespace {

text::Vocabulary shared_vocab() {
  std::vector<RawExample> corpus;
  for (auto tag : {DatasetTag::RHMD, DatasetTag::Illness, DatasetTag::PHM2017}) {
    const auto part = text::generate_synthetic(tag, 3, 1);
    corpus.insert(corpus.end(), part.begin(), part.end());
  }
  auto forced = fixture_words();
  for (auto& w : text::generator_words()) forced.push_back(w);
  forced.push_back("happy bday it feels");
  return text::build_vocab(corpus, 1, forced);
}

model::EncoderConfig config_for(const text::Vocabulary& vocab, std::size_t layers, std::size_t d,
                                std::size_t d_ff) {
  model::EncoderConfig c;
  c.n_layers = layers;
  c.n_heads = 2;
  c.d_model = d;
  c.d_ff = d_ff;
  c.vocab_size = vocab.size();
  c.max_positions = 64;
  c.dropout_rate = 0.0;
  return c;
}

const std::vector<std::string>& rhmd_labels() { return text::label_set(DatasetTag::RHMD); }

std::vector<Technique> all_variants() {
  const auto hard = default_hard_prompt(DatasetTag::RHMD);
  return {technique::FullFineTune{},
          technique::PromptTuning{hard},
          technique::SoftPrompt{{3, 0}},
          technique::WrappedSoftPrompt{{2, 2}},
          technique::SoftPlusHardPrompt{{3, 0}, hard},
          technique::PrefixTuning{{3, false}},
          technique::PrefixPlusLora{{2, false}, {2, 4.0, {model::Projection::Q, model::Projection::V}}}};
}

// Independent parameter arithmetic for an encoder config.
struct Counts {
  std::size_t body, mlm_head;
};
Counts encoder_counts(const model::EncoderConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff, v = c.vocab_size, p = c.max_positions;
  const std::size_t emb = v * d + p * d + 2 * d;
  const std::size_t layer = 4 * (d * d + d) + 2 * (2 * d) + (f * d + f) + (d * f + d);
  return {emb + c.n_layers * layer, v + (c.tie_mlm_head ? 0 : v * d)};
}

RawExample rhmd_example(const std::string& text = "my cough is bad today") {
  return {text, "Health", std::nullopt, DatasetTag::RHMD};
}

}  // namespace

TEST_SUITE("adapters") {
  TEST_CASE("render_template examples") {
    const auto vocab = shared_vocab();
    const PromptTemplate feels("It feels {mask}");
    const auto r = render_template(feels, {"happy bday!", "Health", std::nullopt, DatasetTag::RHMD}, vocab);
    const auto words = text::split_words(r.text);
    CHECK(words == std::vector<std::string>{"happy", "bday", "!", "it", "feels", "[MASK]"});
    CHECK(r.mask_slot == 5);

    const auto diag = fixture_template("illness/diagnosed-q");
    const RawExample ill{"I finally know what is wrong", "Positive", "Cancer", DatasetTag::Illness};
    const auto rd = render_template(diag, ill, vocab);
    CHECK(rd.text.find("diagnosed with Cancer? [MASK].") != std::string::npos);
    CHECK(rd.text.rfind("I finally know what is wrong", 0) == 0);

    CHECK_THROWS_AS(render_template(diag, rhmd_example(), vocab), DataError);
  }

  TEST_CASE("template parsing") {
    CHECK_THROWS_AS(PromptTemplate("no slot here"), ConfigError);
    CHECK_THROWS_AS(PromptTemplate("{mask} and {mask}"), ConfigError);
    CHECK_THROWS_AS(PromptTemplate("{mask} {label}"), ConfigError);
    CHECK_THROWS_AS(PromptTemplate("{text} {text} {mask}"), ConfigError);
    CHECK(PromptTemplate("{text} means {mask}").has_text_slot());
    CHECK(PromptTemplate(". Is a person diagnosed with {disease}? {mask}.").uses_disease());
  }

  TEST_CASE("encode_with_template keeps the prompt under truncation") {
    const auto vocab = shared_vocab();
    const auto tmpl = fixture_template("rhmd/class-q");
    std::string long_text;
    for (int i = 0; i < 80; ++i) long_text += "cough ";
    const auto enc = encode_with_template(rhmd_example(long_text), tmpl, vocab, 2, 20);
    CHECK(enc.token_ids.size() == 20);
    REQUIRE(enc.mask_position.has_value());
    CHECK(enc.token_ids[*enc.mask_position] == text::Vocabulary::kMask);
    CHECK(enc.token_ids.front() == text::Vocabulary::kCls);
    CHECK(enc.token_ids.back() == vocab.id("."));
    CHECK_THROWS_AS(encode_with_template(rhmd_example(), tmpl, vocab, 0, 5), ConfigError);
    // A literal [MASK] typed by a user does not become a second slot.
    const auto lit = encode_with_template(rhmd_example("what [MASK] is this"), tmpl, vocab, 0, 64);
    CHECK(std::count(lit.token_ids.begin(), lit.token_ids.end(), text::Vocabulary::kMask) == 1);
  }

  TEST_CASE("classify_by_verbalizer examples") {
    const auto vocab = shared_vocab();
    const auto yesno = fixture_verbalizer("illness/yesno");
    const auto ids = yesno.token_ids(vocab);
    std::vector<double> row(vocab.size(), -3.0);
    row[static_cast<std::size_t>(vocab.id("yes"))] = 2.0;
    row[static_cast<std::size_t>(vocab.id("no"))] = 1.0;
    const auto d = classify_by_verbalizer(row, yesno, ids);
    CHECK(d.label == "Positive");
    CHECK(d.class_index == 0);
    CHECK(d.probabilities[0] == doctest::Approx(0.7310586).epsilon(1e-6));
    CHECK(d.probabilities[1] == doctest::Approx(0.2689414).epsilon(1e-6));

    row[static_cast<std::size_t>(vocab.id("no"))] = 2.0;
    CHECK(classify_by_verbalizer(row, yesno, ids).label == "Positive");

    const auto abbrev = fixture_verbalizer("rhmd/abbrev");
    const auto aids = abbrev.token_ids(vocab);
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> r(vocab.size());
      for (auto& x : r) x = 10.0 * rng.normal();
      const auto a = classify_by_verbalizer(r, abbrev, aids);
      double s = 0.0;
      for (double p : a.probabilities) s += p;
      CHECK(std::abs(s - 1.0) < 1e-12);
      const double shift = 100.0 * rng.normal();
      for (auto id : aids) r[static_cast<std::size_t>(id)] += shift;
      CHECK(classify_by_verbalizer(r, abbrev, aids).class_index == a.class_index);
    }
  }

  TEST_CASE("verbalizer invariants") {
    const auto vocab = shared_vocab();
    using Entries = std::vector<std::pair<std::string, std::string>>;
    CHECK_THROWS_AS(Verbalizer(Entries{{"a", "Yes"}, {"b", "Yes"}}), ConfigError);
    CHECK_THROWS_AS(Verbalizer(Entries{{"a", "two words"}}), ConfigError);
    CHECK_THROWS_AS(Verbalizer(Entries{}), ConfigError);
    CHECK_THROWS_AS(Verbalizer(Entries{{"a", "zzzunseen"}}).token_ids(vocab), DataError);
    CHECK(fixture_verbalizer("phm/table-variant").labels() == text::label_set(DatasetTag::PHM2017));
  }

  TEST_CASE("apply_soft_prompt examples") {
    Rng rng(1);
    const auto table = ad::Tensor::randn({40, 8}, rng, 1.0);
    const auto x = ad::Tensor::randn({10, 8}, rng, 1.0);

    const auto b5 = SoftPromptBank::create({5, 0}, table, rng);
    const auto r5 = apply_soft_prompt(b5, x, 64);
    CHECK(r5.sequence.rows() == 15);
    CHECK(r5.shift == 5);

    const auto b32 = SoftPromptBank::create({3, 2}, table, rng);
    const auto r32 = apply_soft_prompt(b32, x, 64);
    CHECK(r32.sequence.rows() == 15);
    CHECK(testsupport::bitwise_equal(r32.sequence.data().subspan(13 * 8), b32.post.data()));
    CHECK(testsupport::bitwise_equal(r32.sequence.data().subspan(0, 3 * 8), b32.pre.data()));
    CHECK(testsupport::bitwise_equal(r32.sequence.data().subspan(3 * 8, 10 * 8), x.data()));

    CHECK_THROWS_AS(SoftPromptBank::create({0, 0}, table, rng), ConfigError);
    CHECK_THROWS_AS(apply_soft_prompt(b5, x, 14), DimensionError);

    // Rows come from real (non-reserved) embedding rows.
    for (std::size_t r = 0; r < 5; ++r) {
      bool found = false;
      for (std::size_t t = text::Vocabulary::kNumReserved; t < 40 && !found; ++t) {
        found = testsupport::bitwise_equal(b5.pre.data().subspan(r * 8, 8), table.data().subspan(t * 8, 8));
      }
      CHECK(found);
    }
  }

  TEST_CASE("apply_soft_plus_hard example") {
    const auto vocab = shared_vocab();
    const model::EncoderModel enc(config_for(vocab, 1, 8, 16), 3);
    const PromptTemplate tmpl(". is it health ? {mask}");
    // [CLS] + 7 words = 8 text positions; the prompt adds 6 including [MASK].
    const auto ex = encode_with_template(rhmd_example("my cough is bad today at work"), tmpl, vocab, 0, 64);
    REQUIRE(ex.token_ids.size() == 14);
    Rng rng(2);
    const auto bank = SoftPromptBank::create({4, 0}, enc.token_embeddings(), rng);
    const auto r = apply_soft_plus_hard(bank, ex, enc);
    CHECK(r.sequence.rows() == 18);
    CHECK(r.mask_index == 17);

    Rng rng2(2);
    const auto wrapped = SoftPromptBank::create({2, 1}, enc.token_embeddings(), rng2);
    CHECK_THROWS_AS(apply_soft_plus_hard(wrapped, ex, enc), ConfigError);
    const auto plain = text::encode_plain(rhmd_example(), vocab, 0, 64);
    CHECK_THROWS_AS(apply_soft_plus_hard(bank, plain, enc), ConfigError);
  }

  TEST_CASE("apply_lora examples") {
    Rng rng(3);
    const auto w = ad::Tensor::randn({4, 4}, rng, 1.0);
    const auto a = ad::Tensor::randn({2, 4}, rng, 1.0);
    const auto zero_b = ad::Tensor::zeros({4, 2});
    CHECK(testsupport::bitwise_equal(apply_lora(w, a, zero_b, 8.0, 2).data(), w.data()));

    const auto e_a = ad::Tensor::from_data({1, 4}, {1, 0, 0, 0});
    const auto e_b = ad::Tensor::from_data({4, 1}, {1, 0, 0, 0});
    const auto one = apply_lora(w, e_a, e_b, 1.0, 1);
    for (std::size_t i = 0; i < 16; ++i) {
      const double expect = w.data()[i] + (i == 0 ? 1.0 : 0.0);
      CHECK(one.data()[i] == expect);
    }
    const auto two = apply_lora(w, e_a, e_b, 2.0, 1);
    CHECK(two.data()[0] - w.data()[0] == doctest::Approx(2.0 * (one.data()[0] - w.data()[0])));
    CHECK_THROWS_AS(apply_lora(w, ad::Tensor::zeros({2, 3}), zero_b, 1.0, 2), DimensionError);
  }

  TEST_CASE("lora identity at initialization") {
    const auto vocab = shared_vocab();
    const model::EncoderModel base(config_for(vocab, 2, 16, 32), 5);
    AdapterSpec spec;
    spec.technique = technique::PrefixPlusLora{{0, false}, {4, 8.0, {model::Projection::Q, model::Projection::V}}};
    const AdaptedModel lora(base.clone(), spec, vocab, rhmd_labels(), 48, 9);
    REQUIRE(lora.lora() != nullptr);
    CHECK(lora.prefix() == nullptr);
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<int> ids(1 + rng.below(30));
      for (auto& id : ids) id = static_cast<int>(rng.below(vocab.size()));
      text::EncodedExample ex;
      ex.token_ids = ids;
      ex.attention_length = ids.size();
      CHECK(testsupport::bitwise_equal(lora.forward(ex, {}).hidden.data(), base.forward(ids).hidden.data()));
    }
  }

  TEST_CASE("sequence length effects") {
    const auto vocab = shared_vocab();
    const model::EncoderModel base(config_for(vocab, 2, 16, 32), 5);
    const auto labels = rhmd_labels();
    const auto raw = rhmd_example();
    for (const auto& t : all_variants()) {
      AdapterSpec spec;
      spec.technique = t;
      const AdaptedModel m(base.clone(), spec, vocab, labels, 48, 2);
      const auto ex = m.encode(raw);
      const std::size_t n = ex.token_ids.size();
      const std::size_t extra = m.soft_prompt() ? m.soft_prompt()->p_pre() + m.soft_prompt()->p_post() : 0;
      CAPTURE(spec.kind());
      CHECK(m.forward(ex, {}).hidden.rows() == n + extra);
      CHECK(m.logits(ex, {}).cols() == labels.size());
    }
  }

  TEST_CASE("gradients reach only trainable parameters") {
    const auto vocab = shared_vocab();
    const model::EncoderModel base(config_for(vocab, 2, 16, 32), 5);
    for (const auto& freeze : {model::FreezePolicy::all(), model::FreezePolicy::first_k_layers(1)}) {
      for (const auto& t : all_variants()) {
        AdapterSpec spec;
        spec.technique = t;
        spec.freeze = freeze;
        const AdaptedModel m(base.clone(), spec, vocab, rhmd_labels(), 48, 2);
        if (model::count_trainable(m.parameters()) == 0) continue;  // hard prompt with everything frozen
        const auto ex = m.encode(rhmd_example());
        {
          ad::Tape tape;
          ad::backward(ad::cross_entropy(m.logits(ex, {}), std::vector<int>{ex.label_id}));
        }
        for (const auto& p : m.all_parameters()) {
          CAPTURE(spec.kind());
          CAPTURE(p.name);
          if (!p.tensor.requires_grad()) CHECK_FALSE(p.tensor.has_grad());
        }
        // Something trainable did receive a gradient.
        bool any = false;
        for (const auto& p : m.parameters()) {
          if (!p.tensor.has_grad()) continue;
          for (double g : p.tensor.grad()) any |= g != 0.0;
        }
        CHECK(any);
      }
    }
  }

  TEST_CASE("adapter checkpoint reproduces logits") {
    const auto vocab = shared_vocab();
    const model::EncoderModel base(config_for(vocab, 2, 16, 32), 5);
    const auto dir = testsupport::scratch_dir("adapter_ckpt");
    for (const auto& t : all_variants()) {
      AdapterSpec spec;
      spec.technique = t;
      spec.freeze = model::FreezePolicy::all();
      AdaptedModel a(base.clone(), spec, vocab, rhmd_labels(), 48, 2);
      // Perturb adapter values so that the loaded state differs from a fresh init.
      Rng rng(8);
      auto owned = a.adapter_parameters();
      for (const auto& p : a.task_head_parameters()) owned.push_back(p);
      for (auto& p : owned) {
        for (auto& v : p.tensor.mutable_data()) v += 0.01 * rng.normal();
      }
      const auto stem = dir / spec.kind();
      model::save_checkpoint(stem, owned);
      AdaptedModel b(base.clone(), spec, vocab, rhmd_labels(), 48, 99);
      auto target = b.adapter_parameters();
      for (const auto& p : b.task_head_parameters()) target.push_back(p);
      model::load_checkpoint(stem, target, true);
      const auto ex = a.encode(rhmd_example());
      CAPTURE(spec.kind());
      CHECK(testsupport::bitwise_equal(a.logits(ex, {}).data(), b.logits(ex, {}).data()));
    }
  }

  TEST_CASE("parameter report arithmetic") {
    const auto vocab = shared_vocab();
    const auto small = config_for(vocab, 2, 64, 128);
    const auto counts = encoder_counts(small);
    {
      AdapterSpec spec;
      spec.technique = technique::PrefixTuning{{4, false}};
      spec.freeze = model::FreezePolicy::all();
      const AdaptedModel m(model::EncoderModel(small, 1), spec, vocab, rhmd_labels(), 48, 1);
      const auto r = trainable_parameter_report(m);
      CHECK(r.adapter_total == 2 * 2 * 4 * 64);
      CHECK(r.adapter_total == 1024);
      CHECK(r.adapter_trainable == 1024);
      CHECK(r.body_total == counts.body);
      CHECK(r.body_trainable == 0);
      CHECK(r.task_head_total == 64 * 3 + 3);
      CHECK(r.trainable == 1024 + 64 * 3 + 3);
      CHECK(r.total == counts.body + counts.mlm_head + 1024 + 64 * 3 + 3);
    }
    {
      AdapterSpec spec;
      const AdaptedModel m(model::EncoderModel(small, 1), spec, vocab, rhmd_labels(), 48, 1);
      const auto r = trainable_parameter_report(m);
      CHECK(r.fraction == 1.0);
      CHECK(r.trainable == r.total);
    }
    {
      auto desk = config_for(vocab, 4, 128, 512);
      desk.n_heads = 4;
      desk.max_positions = 128;
      AdapterSpec spec;
      spec.technique = technique::SoftPrompt{{8, 0}};
      spec.freeze = model::FreezePolicy::all();
      const AdaptedModel m(model::EncoderModel(desk, 1), spec, vocab, rhmd_labels(), 64, 1);
      const auto r = trainable_parameter_report(m);
      CHECK(r.adapter_trainable == 1024);
      CHECK(r.task_head_trainable == 128 * 3 + 3);
      CHECK(r.trainable == 1024 + 128 * 3 + 3);
    }
  }

  TEST_CASE("desk default fractions") {
    const auto vocab = shared_vocab();
    model::EncoderConfig desk;  // 4 layers, 4 heads, d 128, d_ff 512, 128 positions
    desk.vocab_size = vocab.size();
    const auto body = encoder_counts(desk).body;
    const std::size_t d = 128, layers = 4;
    struct Case {
      Technique t;
      std::size_t adapter;
      double bound;
    };
    const auto hard = default_hard_prompt(DatasetTag::RHMD);
    const std::vector<Case> cases = {
        {technique::SoftPrompt{{8, 0}}, 8 * d, 0.01},
        {technique::WrappedSoftPrompt{{4, 4}}, 8 * d, 0.05},
        {technique::SoftPlusHardPrompt{{8, 0}, hard}, 8 * d, 0.05},
        {technique::PrefixTuning{{4, false}}, layers * 2 * 4 * d, 0.01},
        {technique::PrefixPlusLora{{4, false}, {4, 8.0, {model::Projection::Q, model::Projection::V}}},
         layers * 2 * 4 * d + layers * 2 * (4 * d + d * 4), 0.05},
    };
    for (const auto& c : cases) {
      AdapterSpec spec;
      spec.technique = c.t;
      spec.freeze = model::FreezePolicy::all();
      const AdaptedModel m(model::EncoderModel(desk, 1), spec, vocab, rhmd_labels(), 64, 1);
      const auto r = trainable_parameter_report(m);
      CAPTURE(spec.kind());
      CHECK(r.adapter_trainable == c.adapter);
      const double expect = static_cast<double>(c.adapter) / static_cast<double>(body + c.adapter);
      CHECK(r.fraction_excluding_heads == expect);
      CHECK(r.fraction_excluding_heads < c.bound);
    }
  }

  TEST_CASE("prefix reparameterization") {
    const auto vocab = shared_vocab();
    const auto cfg = config_for(vocab, 2, 16, 32);
    Rng rng(3);
    const PrefixBank bank({3, true}, cfg, rng);
    const auto kv = bank.materialize();
    REQUIRE(kv.size() == 2);
    CHECK(kv[0].key.shape() == ad::Shape{3, 16});
    CHECK(kv[1].value.shape() == ad::Shape{3, 16});
    std::size_t n = 0;
    for (const auto& p : bank.parameters()) n += p.tensor.numel();
    // raw [3,16] + W1 [16,16] + b1 + W2 [2*2*16, 16] + b2
    CHECK(n == 3 * 16 + 16 * 16 + 16 + 64 * 16 + 64);

    AdapterSpec spec;
    spec.technique = technique::PrefixTuning{{3, true}};
    spec.freeze = model::FreezePolicy::all();
    const AdaptedModel m(model::EncoderModel(cfg, 4), spec, vocab, rhmd_labels(), 48, 5);
    const auto ex = m.encode(rhmd_example());
    const auto r = testsupport::finite_difference_check(m.parameters(), [&] {
      return ad::cross_entropy(m.logits(ex, {}), std::vector<int>{ex.label_id});
    });
    INFO(r.worst);
    CHECK(r.max_rel < 1e-4);
  }

  TEST_CASE("spec validation and kinds") {
    AdapterSpec spec;
    spec.technique = technique::SoftPrompt{{0, 0}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.technique = technique::WrappedSoftPrompt{{3, 0}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.technique = technique::SoftPlusHardPrompt{{0, 0}, default_hard_prompt(DatasetTag::RHMD)};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.technique = technique::PrefixTuning{{0, false}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.technique = technique::PrefixPlusLora{{2, false}, {0, 8.0, {model::Projection::Q}}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.technique = technique::PrefixPlusLora{{2, false}, {2, 8.0, {model::Projection::Q, model::Projection::Q}}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);

    std::set<std::string> kinds;
    for (const auto& t : all_variants()) {
      AdapterSpec s;
      s.technique = t;
      CHECK_NOTHROW(s.validate());
      kinds.insert(s.kind());
      const bool mask_route = std::holds_alternative<technique::PromptTuning>(t) ||
                              std::holds_alternative<technique::SoftPlusHardPrompt>(t);
      CHECK(s.uses_verbalizer() == mask_route);
    }
    CHECK(kinds.size() == 7);
  }

  TEST_CASE("model construction errors") {
    const auto vocab = shared_vocab();
    const auto cfg = config_for(vocab, 1, 16, 32);
    AdapterSpec spec;
    spec.technique = technique::PromptTuning{default_hard_prompt(DatasetTag::RHMD)};
    // Verbalizer classes must match the dataset labels.
    CHECK_THROWS_AS(AdaptedModel(model::EncoderModel(cfg, 1), spec, vocab, text::label_set(DatasetTag::Illness), 48, 1),
                    ConfigError);
    auto wrong = cfg;
    wrong.vocab_size += 1;
    CHECK_THROWS_AS(AdaptedModel(model::EncoderModel(wrong, 1), spec, vocab, rhmd_labels(), 48, 1), DataError);
    AdapterSpec soft;
    soft.technique = technique::SoftPrompt{{20, 0}};
    CHECK_THROWS_AS(AdaptedModel(model::EncoderModel(cfg, 1), soft, vocab, rhmd_labels(), 48, 1), ConfigError);
    const AdaptedModel ok(model::EncoderModel(cfg, 1), AdapterSpec{}, vocab, rhmd_labels(), 48, 1);
    CHECK_THROWS_AS(ok.encode({"x", "Positive", std::nullopt, DatasetTag::Illness}), DataError);
  }
}
