#include "peftlab/pos.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "peftlab/errors.hpp"
#include "peftlab/ops.hpp"

namespace peftlab::pos {

PosTagset::PosTagset(std::vector<std::string> tags) : tags_(std::move(tags)) {
  if (tags_.empty()) throw ConfigError("POS tagset is empty");
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    if (std::find(tags_.begin(), tags_.begin() + static_cast<std::ptrdiff_t>(i), tags_[i]) !=
        tags_.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ConfigError("POS tag '" + tags_[i] + "' listed twice");
    }
  }
}

PosTagset PosTagset::universal() {
  return PosTagset({"ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART",
                    "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"});
}

int PosTagset::id(std::string_view tag) const {
  const auto it = std::find(tags_.begin(), tags_.end(), tag);
  if (it == tags_.end()) throw DataError("unknown POS tag '" + std::string(tag) + "'");
  return static_cast<int>(it - tags_.begin());
}

void validate_example(const PosExample& ex, const PosTagset& tagset) {
  if (ex.tokens.size() != ex.tags.size()) {
    throw DataError("POS example has " + std::to_string(ex.tokens.size()) + " tokens but " +
                    std::to_string(ex.tags.size()) + " tags");
  }
  for (int t : ex.tags) {
    if (t < 0 || static_cast<std::size_t>(t) >= tagset.size()) {
      throw DataError("POS tag id " + std::to_string(t) + " outside the tagset");
    }
  }
}

std::string lexicon_tag(std::string_view word) {
  static const std::unordered_map<std::string_view, std::string_view> table = {
      {"this", "DET"}, {"that", "DET"}, {"a", "DET"}, {"an", "DET"}, {"the", "DET"},
      {"i", "PRON"}, {"me", "PRON"}, {"my", "PRON"}, {"she", "PRON"}, {"we", "PRON"},
      {"it", "PRON"}, {"there", "PRON"}, {"what", "PRON"},
      {"is", "AUX"}, {"was", "AUX"}, {"am", "AUX"}, {"are", "AUX"}, {"has", "AUX"}, {"does", "AUX"},
      {"giving", "VERB"}, {"gave", "VERB"}, {"read", "VERB"}, {"says", "VERB"}, {"came", "VERB"},
      {"went", "VERB"}, {"saw", "VERB"}, {"checked", "VERB"}, {"started", "VERB"}, {"told", "VERB"},
      {"fighting", "VERB"}, {"fight", "VERB"}, {"donate", "VERB"}, {"fundraise", "VERB"},
      {"volunteer", "VERB"}, {"watched", "VERB"}, {"diagnosed", "VERB"}, {"tested", "VERB"},
      {"confirmed", "VERB"}, {"treated", "VERB"}, {"indicate", "VERB"}, {"got", "VERB"},
      {"to", "ADP"}, {"about", "ADP"}, {"in", "ADP"}, {"on", "ADP"}, {"of", "ADP"}, {"for", "ADP"},
      {"with", "ADP"},
      {"because", "SCONJ"},
      {"and", "CCONJ"}, {"but", "CCONJ"}, {"or", "CCONJ"},
      {"not", "PART"},
      {"honestly", "ADV"}, {"today", "ADV"}, {"so", "ADV"}, {"well", "ADV"}, {"yesterday", "ADV"},
      {"literally", "ADV"}, {"figuratively", "ADV"}, {"basically", "ADV"}, {"together", "ADV"},
      {"just", "ADV"}, {"right", "ADV"}, {"now", "ADV"},
      {"lol", "INTJ"}, {"haha", "INTJ"}, {"lmao", "INTJ"}, {"ugh", "INTJ"}, {"okay", "INTJ"},
      {"please", "INTJ"}, {"yes", "INTJ"}, {"no", "INTJ"},
      {"total", "ADJ"}, {"new", "ADJ"}, {"common", "ADJ"}, {"worse", "ADJ"}, {"last", "ADJ"},
      {"general", "ADJ"}, {"positive", "ADJ"}, {"negative", "ADJ"},
      {"alzheimer", "PROPN"}, {"parkinson", "PROPN"},
      {"non", "X"}, {"fm", "X"}, {"nm", "X"}, {"hm", "X"}, {"nh", "X"}, {"om", "X"}, {"sm", "X"},
  };
  if (const auto it = table.find(word); it != table.end()) return std::string(it->second);
  if (word.empty()) return "X";
  if (std::all_of(word.begin(), word.end(), [](unsigned char c) { return std::isdigit(c); })) return "NUM";
  if (std::none_of(word.begin(), word.end(), [](unsigned char c) { return std::isalnum(c); })) {
    return word.size() == 1 && std::ispunct(static_cast<unsigned char>(word[0])) ? "PUNCT" : "SYM";
  }
  return "NOUN";
}

std::vector<PosExample> synthetic_pos_corpus(std::size_t n_sentences, std::uint64_t seed,
                                             const PosTagset& tagset) {
  static constexpr text::DatasetTag schemas[] = {text::DatasetTag::RHMD, text::DatasetTag::PHM2017,
                                                 text::DatasetTag::Illness};
  std::vector<PosExample> out;
  for (std::size_t s = 0; s < 3 && out.size() < n_sentences; ++s) {
    const std::size_t share = (n_sentences - out.size() + (2 - s)) / (3 - s);
    const std::size_t n_classes = text::label_set(schemas[s]).size();
    const auto raw = text::generate_synthetic(schemas[s], (share + n_classes - 1) / n_classes,
                                              derive_seed(seed, s));
    for (std::size_t i = 0; i < share && i < raw.size(); ++i) {
      PosExample ex;
      ex.tokens = text::split_words(raw[i].text);
      for (const auto& w : ex.tokens) ex.tags.push_back(tagset.id(lexicon_tag(w)));
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<PosExample> load_pos_corpus(const std::filesystem::path& path, const PosTagset& tagset) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open POS corpus " + path.string());
  std::vector<PosExample> out;
  PosExample cur;
  std::string line;
  std::size_t lineno = 0;
  auto flush = [&] {
    if (!cur.tokens.empty()) out.push_back(std::move(cur));
    cur = {};
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush();
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected token<TAB>tag");
    }
    try {
      cur.tags.push_back(tagset.id(line.substr(tab + 1)));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    cur.tokens.push_back(line.substr(0, tab));
  }
  flush();
  if (out.empty()) throw DataError("POS corpus " + path.string() + " has no sentences");
  return out;
}

void save_pos_corpus(const std::filesystem::path& path, std::span<const PosExample> corpus,
                     const PosTagset& tagset) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write POS corpus " + path.string());
  for (const auto& ex : corpus) {
    validate_example(ex, tagset);
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) out << ex.tokens[i] << '\t' << tagset.tag(ex.tags[i]) << '\n';
    out << '\n';
  }
}

PosTagger make_pos_tagger(model::EncoderModel encoder, PosTagset tagset, std::uint64_t seed) {
  Rng rng(seed);
  model::LinearHead head("head.pos", encoder.config().d_model, tagset.size(), rng);
  return {std::move(encoder), std::move(head), std::move(tagset)};
}

EncodedPos encode_pos(const PosExample& ex, const text::Vocabulary& vocab, std::size_t max_positions) {
  EncodedPos enc;
  enc.ids.push_back(text::Vocabulary::kCls);
  const std::size_t keep = std::min(ex.tokens.size(), max_positions - 1);
  for (std::size_t i = 0; i < keep; ++i) {
    std::string lower = ex.tokens[i];
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    enc.ids.push_back(vocab.id(lower));
    enc.tags.push_back(ex.tags[i]);
  }
  return enc;
}

ad::Tensor tag_logits(const PosTagger& tagger, const EncodedPos& ex, const model::ForwardOptions& opts) {
  const auto out = tagger.encoder.forward(ex.ids, {}, opts);
  return tagger.head.forward(ad::slice(out.hidden, 0, 1, ex.tags.size()));
}

PosTrainResult train_pos_tagger(PosTagger& tagger, const text::Vocabulary& vocab,
                                std::span<const PosExample> corpus, const train::TrainConfig& cfg) {
  cfg.validate();
  for (const auto& ex : corpus) validate_example(ex, tagger.tagset);
  PosTrainResult result;
  if (cfg.epochs == 0) return result;

  std::vector<EncodedPos> encoded;
  for (const auto& ex : corpus) {
    auto e = encode_pos(ex, vocab, tagger.encoder.config().max_positions);
    if (!e.tags.empty()) encoded.push_back(std::move(e));
  }
  if (encoded.empty()) throw DataError("POS corpus is empty");

  model::set_trainable(tagger.encoder, model::FreezePolicy::train_all());
  model::ParameterList params = tagger.encoder.body_parameters();
  for (const auto& p : tagger.head.parameters()) params.push_back(p);
  train::AdamW opt(params, cfg.adamw);
  const train::ScheduleConfig sched{cfg.lr_max, cfg.lr_min,
                                    train::total_steps(cfg.epochs, encoded.size(), cfg.batch_size)};
  Rng shuffle_rng(derive_seed(cfg.seed, fnv1a("pos-shuffle")));
  Rng dropout_rng(derive_seed(cfg.seed, fnv1a("pos-dropout")));
  const model::ForwardOptions opts{true, &dropout_rng, false};

  std::vector<std::size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const double lr = train::cosine_lr(step++, sched);
      ad::Tape tape;
      std::vector<ad::Tensor> rows;
      std::vector<int> targets;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        const auto& ex = encoded[order[i]];
        rows.push_back(tag_logits(tagger, ex, opts));
        targets.insert(targets.end(), ex.tags.begin(), ex.tags.end());
      }
      const auto loss = ad::cross_entropy(ad::concat(rows, 0), targets);
      if (!std::isfinite(loss.item())) throw TrainingError("non-finite POS loss in epoch " + std::to_string(epoch));
      ad::backward(loss);
      opt.step(lr);
      opt.zero_grad();
      loss_sum += loss.item();
      ++n;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(n));
  }
  return result;
}

double tag_accuracy(const PosTagger& tagger, const text::Vocabulary& vocab,
                    std::span<const PosExample> corpus) {
  ad::NoGradGuard guard;
  std::size_t correct = 0, total = 0;
  for (const auto& ex : corpus) {
    validate_example(ex, tagger.tagset);
    const auto enc = encode_pos(ex, vocab, tagger.encoder.config().max_positions);
    if (enc.tags.empty()) continue;
    const auto logits = tag_logits(tagger, enc, {});
    const std::size_t n_tags = logits.cols();
    for (std::size_t r = 0; r < enc.tags.size(); ++r) {
      const auto row = logits.data().subspan(r * n_tags, n_tags);
      const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += pred == enc.tags[r];
      ++total;
    }
  }
  if (total == 0) throw DataError("no tokens to score");
  return static_cast<double>(correct) / static_cast<double>(total);
}

TargetResult intermediate_then_target(model::EncoderModel pos_encoder, const peft::AdapterSpec& adapter,
                                      const text::Vocabulary& vocab, std::vector<std::string> labels,
                                      std::span<const text::RawExample> train_set,
                                      std::span<const text::RawExample> val_set,
                                      std::span<const text::RawExample> test_set,
                                      const train::TrainConfig& cfg, std::size_t max_length,
                                      std::uint64_t adapter_seed) {
  peft::AdaptedModel model(std::move(pos_encoder), adapter, vocab, std::move(labels), max_length, adapter_seed);
  auto encode_all = [&](std::span<const text::RawExample> xs) {
    std::vector<text::EncodedExample> out;
    for (const auto& x : xs) out.push_back(model.encode(x));
    return out;
  };
  const auto tr = encode_all(train_set), va = encode_all(val_set), te = encode_all(test_set);
  auto result = train::train_classifier(model, tr, va, cfg);
  auto test = train::evaluate(model, te);
  return {std::move(model), std::move(result), std::move(test)};
}

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::Concat: return "concat";
    case FusionMode::Sum: return "sum";
    case FusionMode::Mean: return "mean";
  }
  return "concat";
}

FusionMode parse_fusion_mode(std::string_view name) {
  if (name == "concat") return FusionMode::Concat;
  if (name == "sum") return FusionMode::Sum;
  if (name == "mean") return FusionMode::Mean;
  throw ConfigError("unknown fusion mode '" + std::string(name) + "' (expected concat, sum or mean)");
}

namespace {

model::LinearHead fusion_head(const model::EncoderModel& a, const model::EncoderModel& b,
                              std::size_t n_labels, FusionMode mode, std::uint64_t seed) {
  if (a.config().d_model != b.config().d_model) {
    throw DimensionError("fusion encoders disagree on d_model (" + std::to_string(a.config().d_model) +
                         " vs " + std::to_string(b.config().d_model) + ")");
  }
  if (n_labels == 0) throw ConfigError("classifier needs at least one label");
  Rng rng(seed);
  const std::size_t d = a.config().d_model;
  return model::LinearHead("head.fusion", mode == FusionMode::Concat ? 2 * d : d, n_labels, rng);
}

}  // namespace

FusionModel::FusionModel(model::EncoderModel encoder_a, model::EncoderModel encoder_b, text::Vocabulary vocab,
                         std::vector<std::string> labels, FusionMode mode, std::size_t max_length,
                         std::uint64_t seed, model::FreezePolicy policy_a, bool train_both)
    : a_(std::move(encoder_a)),
      b_(std::move(encoder_b)),
      vocab_(std::move(vocab)),
      labels_(std::move(labels)),
      mode_(mode),
      max_length_(max_length),
      head_(fusion_head(a_, b_, labels_.size(), mode, seed)) {
  if (a_.config().vocab_size != vocab_.size() || b_.config().vocab_size != vocab_.size()) {
    throw DataError("fusion encoders must share the vocabulary (" + std::to_string(vocab_.size()) + " tokens)");
  }
  if (max_length_ < 2 || max_length_ > std::min(a_.config().max_positions, b_.config().max_positions)) {
    throw ConfigError("max_length " + std::to_string(max_length_) + " does not fit the encoders");
  }
  model::set_trainable(a_, policy_a);
  model::set_trainable(b_, train_both ? policy_a : model::FreezePolicy::all());
}

text::EncodedExample FusionModel::encode(const text::RawExample& example) const {
  const auto it = std::find(labels_.begin(), labels_.end(), example.label);
  if (it == labels_.end()) throw DataError("label '" + example.label + "' is not a class of this model");
  return text::encode_plain(example, vocab_, static_cast<int>(it - labels_.begin()), max_length_);
}

ad::Tensor FusionModel::fused(const text::EncodedExample& example, const model::ForwardOptions& opts) const {
  // Sequential on purpose: both passes record on this thread's tape.
  const auto pa = model::pooled_representation(a_.forward(example.token_ids, {}, opts).hidden);
  const auto pb = model::pooled_representation(b_.forward(example.token_ids, {}, opts).hidden);
  switch (mode_) {
    case FusionMode::Concat: return ad::concat({pa, pb}, 1);
    case FusionMode::Sum: return ad::add(pa, pb);
    case FusionMode::Mean: return ad::scale(ad::add(pa, pb), 0.5);
  }
  return ad::concat({pa, pb}, 1);
}

ad::Tensor FusionModel::logits(const text::EncodedExample& example, const model::ForwardOptions& opts) const {
  return head_.forward(fused(example, opts));
}

model::ParameterList FusionModel::parameters() const {
  model::ParameterList out;
  for (const auto& p : a_.body_parameters()) out.push_back({"a." + p.name, p.tensor});
  for (const auto& p : b_.body_parameters()) out.push_back({"b." + p.name, p.tensor});
  for (const auto& p : head_.parameters()) out.push_back(p);
  return out;
}

model::ParameterList FusionModel::all_parameters() const { return parameters(); }

}  // namespace peftlab::pos
