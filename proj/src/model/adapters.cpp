#include "peftlab/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "peftlab/errors.hpp"

namespace peftlab::peft {

namespace {

struct Piece {
  bool placeholder;
  std::string value;  // literal text or placeholder name
};

std::vector<Piece> parse_pattern(const std::string& pattern) {
  std::vector<Piece> pieces;
  std::string literal;
  for (std::size_t i = 0; i < pattern.size();) {
    if (pattern[i] == '{') {
      const auto close = pattern.find('}', i);
      if (close == std::string::npos) throw ConfigError("unterminated placeholder in template '" + pattern + "'");
      std::string name = pattern.substr(i + 1, close - i - 1);
      if (name != "text" && name != "disease" && name != "mask") {
        throw ConfigError("unknown placeholder {" + name + "} in template '" + pattern + "'");
      }
      if (!literal.empty()) pieces.push_back({false, std::move(literal)});
      literal.clear();
      pieces.push_back({true, std::move(name)});
      i = close + 1;
    } else {
      literal += pattern[i++];
    }
  }
  if (!literal.empty()) pieces.push_back({false, std::move(literal)});
  return pieces;
}

std::string normalize_word(const std::string& word) {
  auto parts = text::split_words(word);
  if (parts.size() != 1) {
    throw ConfigError("verbalizer word '" + word + "' is not a single token");
  }
  return parts[0];
}

// Prompt text before and after the {text} slot, with {disease} and {mask}
// substituted.
std::pair<std::string, std::string> render_pieces(const PromptTemplate& tmpl,
                                                  const text::RawExample& example) {
  if (tmpl.uses_disease() && !example.disease) {
    throw DataError("template '" + tmpl.pattern() + "' needs a disease but the " +
                    std::string(text::to_string(example.dataset_tag)) + " example has none");
  }
  std::string before, after;
  bool seen_text = !tmpl.has_text_slot();
  if (!tmpl.has_text_slot()) after = " ";
  for (const auto& p : parse_pattern(tmpl.pattern())) {
    std::string& dst = seen_text ? after : before;
    if (!p.placeholder) {
      dst += p.value;
    } else if (p.value == "text") {
      seen_text = true;
    } else if (p.value == "disease") {
      dst += *example.disease;
    } else {
      dst += "[MASK]";
    }
  }
  return {before, after};
}

ad::Tensor trainable(ad::Tensor t) {
  t.set_requires_grad(true);
  return t;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string pattern) : pattern_(std::move(pattern)) {
  int masks = 0, texts = 0;
  for (const auto& p : parse_pattern(pattern_)) {
    if (!p.placeholder) continue;
    masks += p.value == "mask";
    texts += p.value == "text";
  }
  if (masks != 1) {
    throw ConfigError("template '" + pattern_ + "' must contain exactly one {mask}, found " +
                      std::to_string(masks));
  }
  if (texts > 1) throw ConfigError("template '" + pattern_ + "' has more than one {text}");
}

bool PromptTemplate::uses_disease() const { return pattern_.find("{disease}") != std::string::npos; }
bool PromptTemplate::has_text_slot() const { return pattern_.find("{text}") != std::string::npos; }

std::string PromptTemplate::display() const {
  std::string out;
  for (const auto& p : parse_pattern(pattern_)) {
    if (!p.placeholder) {
      out += p.value;
    } else if (p.value == "mask") {
      out += "[mask]";
    } else if (p.value == "disease") {
      out += "{name of the disease}";
    } else {
      out += "{text}";
    }
  }
  return out;
}

std::vector<std::string> PromptTemplate::fixed_words() const {
  std::vector<std::string> words;
  for (const auto& p : parse_pattern(pattern_)) {
    if (p.placeholder) continue;
    for (auto& w : text::split_words(p.value)) words.push_back(std::move(w));
  }
  return words;
}

RenderedPrompt render_template(const PromptTemplate& tmpl, const text::RawExample& example,
                               const text::Vocabulary& vocab) {
  (void)vocab;
  auto [before, after] = render_pieces(tmpl, example);
  const auto before_words = text::split_words(before);
  const auto text_words = text::split_words(example.text);
  const auto after_words = text::split_words(after);
  std::size_t slot = 0;
  if (auto it = std::find(before_words.begin(), before_words.end(), "[MASK]"); it != before_words.end()) {
    slot = static_cast<std::size_t>(it - before_words.begin());
  } else {
    auto jt = std::find(after_words.begin(), after_words.end(), "[MASK]");
    slot = before_words.size() + text_words.size() + static_cast<std::size_t>(jt - after_words.begin());
  }
  return {before + example.text + after, slot};
}

text::EncodedExample encode_with_template(const text::RawExample& example,
                                          const PromptTemplate& tmpl,
                                          const text::Vocabulary& vocab, int label_id,
                                          std::size_t max_length) {
  auto [before, after] = render_pieces(tmpl, example);
  const auto before_ids = text::tokenize(before, vocab);
  const auto after_ids = text::tokenize(after, vocab);
  auto text_ids = text::tokenize(example.text, vocab);
  // A literal [MASK] in user text must not compete with the template's slot.
  std::replace(text_ids.begin(), text_ids.end(), text::Vocabulary::kMask, text::Vocabulary::kUnk);
  const std::size_t fixed = 1 + before_ids.size() + after_ids.size();
  if (fixed > max_length) {
    throw ConfigError("template '" + tmpl.pattern() + "' alone exceeds max_length " +
                      std::to_string(max_length));
  }
  text_ids.resize(std::min(text_ids.size(), max_length - fixed));

  text::EncodedExample enc;
  enc.token_ids.push_back(text::Vocabulary::kCls);
  enc.token_ids.insert(enc.token_ids.end(), before_ids.begin(), before_ids.end());
  enc.token_ids.insert(enc.token_ids.end(), text_ids.begin(), text_ids.end());
  enc.token_ids.insert(enc.token_ids.end(), after_ids.begin(), after_ids.end());
  const auto it = std::find(enc.token_ids.begin(), enc.token_ids.end(), text::Vocabulary::kMask);
  enc.mask_position = static_cast<std::size_t>(it - enc.token_ids.begin());
  enc.label_id = label_id;
  enc.attention_length = enc.token_ids.size();
  return enc;
}

Verbalizer::Verbalizer(std::vector<std::pair<std::string, std::string>> entries)
    : entries_(std::move(entries)) {
  if (entries_.empty()) throw ConfigError("verbalizer has no classes");
  std::set<std::string> labels, words;
  for (const auto& [label, word] : entries_) {
    if (!labels.insert(label).second) throw ConfigError("verbalizer repeats label '" + label + "'");
    if (!words.insert(normalize_word(word)).second) {
      throw ConfigError("verbalizer is not injective: word '" + word + "' used twice");
    }
  }
}

std::vector<std::string> Verbalizer::labels() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

std::vector<std::string> Verbalizer::words() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::vector<int> Verbalizer::token_ids(const text::Vocabulary& vocab) const {
  std::vector<int> ids;
  for (const auto& [label, word] : entries_) {
    const auto id = vocab.find(normalize_word(word));
    if (!id) throw DataError("verbalizer word '" + word + "' is not in the vocabulary");
    ids.push_back(*id);
  }
  return ids;
}

VerbalizerDecision classify_by_verbalizer(std::span<const double> logits_row,
                                          const Verbalizer& verbalizer,
                                          std::span<const int> token_ids) {
  if (token_ids.size() != verbalizer.size()) {
    throw DimensionError("verbalizer has " + std::to_string(verbalizer.size()) + " classes but " +
                         std::to_string(token_ids.size()) + " token ids were given");
  }
  std::vector<double> restricted;
  for (int id : token_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= logits_row.size()) {
      throw DimensionError("verbalizer token id " + std::to_string(id) + " outside logits row");
    }
    restricted.push_back(logits_row[static_cast<std::size_t>(id)]);
  }
  VerbalizerDecision d;
  const double mx = *std::max_element(restricted.begin(), restricted.end());
  double sum = 0.0;
  for (double v : restricted) {
    d.probabilities.push_back(std::exp(v - mx));
    sum += d.probabilities.back();
  }
  for (auto& p : d.probabilities) p /= sum;
  d.class_index = static_cast<std::size_t>(
      std::max_element(restricted.begin(), restricted.end()) - restricted.begin());
  d.label = verbalizer.entries()[d.class_index].first;
  return d;
}

SoftPromptBank SoftPromptBank::create(const SoftPromptSpec& spec,
                                      const ad::Tensor& token_embeddings, Rng& rng) {
  if (spec.p_pre + spec.p_post == 0) {
    throw ConfigError("soft prompt bank needs at least one virtual token");
  }
  const std::size_t vocab = token_embeddings.rows(), d = token_embeddings.cols();
  const auto reserved = static_cast<std::size_t>(text::Vocabulary::kNumReserved);
  auto rows = [&](std::size_t n) {
    if (n == 0) return ad::Tensor();
    std::vector<double> data(n * d);
    for (std::size_t r = 0; r < n; ++r) {
      if (vocab > reserved) {
        const std::size_t id = reserved + rng.below(vocab - reserved);
        const auto src = token_embeddings.data().subspan(id * d, d);
        std::copy(src.begin(), src.end(), data.begin() + static_cast<std::ptrdiff_t>(r * d));
      } else {
        for (std::size_t j = 0; j < d; ++j) data[r * d + j] = 0.02 * rng.normal();
      }
    }
    return trainable(ad::Tensor::from_data({n, d}, std::move(data)));
  };
  SoftPromptBank bank;
  bank.pre = rows(spec.p_pre);
  bank.post = rows(spec.p_post);
  return bank;
}

model::ParameterList SoftPromptBank::parameters() const {
  model::ParameterList out;
  if (pre.defined()) out.push_back({"adapter.soft.pre", pre});
  if (post.defined()) out.push_back({"adapter.soft.post", post});
  return out;
}

SoftPromptResult apply_soft_prompt(const SoftPromptBank& bank, const ad::Tensor& embedded,
                                   std::size_t max_positions) {
  if (bank.p_pre() + bank.p_post() == 0) {
    throw ConfigError("soft prompt bank needs at least one virtual token");
  }
  const std::size_t total = bank.p_pre() + embedded.rows() + bank.p_post();
  if (total > max_positions) {
    throw DimensionError("soft-prompted length " + std::to_string(total) +
                         " exceeds max_positions " + std::to_string(max_positions));
  }
  return {ad::concat({bank.pre, embedded, bank.post}, 0), bank.p_pre()};
}

SoftPlusHardResult apply_soft_plus_hard(const SoftPromptBank& bank,
                                        const text::EncodedExample& example,
                                        const model::EncoderModel& model) {
  if (bank.p_pre() == 0) throw ConfigError("soft+hard prompting needs at least one leading virtual token");
  if (bank.p_post() != 0) throw ConfigError("soft+hard prompting places no virtual tokens after the prompt");
  if (!example.mask_position) throw ConfigError("soft+hard prompting needs an example encoded with a template");
  auto r = apply_soft_prompt(bank, model.embed_tokens(example.token_ids), model.config().max_positions);
  return {r.sequence, r.shift + *example.mask_position};
}

PrefixBank::PrefixBank(const PrefixSpec& spec, const model::EncoderConfig& config, Rng& rng)
    : spec_(spec), n_layers_(config.n_layers), d_model_(config.d_model) {
  if (spec.prefix_len < 1) throw ConfigError("prefix_len must be at least 1");
  const std::size_t L = spec.prefix_len, d = d_model_;
  if (!spec.reparameterize) {
    for (std::size_t l = 0; l < n_layers_; ++l) {
      model::LayerPrefix p;
      p.key = trainable(ad::Tensor::randn({L, d}, rng, 0.02));
      p.value = trainable(ad::Tensor::randn({L, d}, rng, 0.02));
      direct_.push_back(std::move(p));
    }
  } else {
    raw_ = trainable(ad::Tensor::randn({L, d}, rng, 0.02));
    mlp_w1_ = trainable(ad::Tensor::randn({d, d}, rng, 0.02));
    mlp_b1_ = trainable(ad::Tensor::zeros({d}));
    mlp_w2_ = trainable(ad::Tensor::randn({2 * n_layers_ * d, d}, rng, 0.02));
    mlp_b2_ = trainable(ad::Tensor::zeros({2 * n_layers_ * d}));
  }
}

std::vector<model::LayerPrefix> PrefixBank::materialize() const {
  if (!spec_.reparameterize) return direct_;
  const ad::Tensor all = ad::linear(ad::tanh(ad::linear(raw_, mlp_w1_, mlp_b1_)), mlp_w2_, mlp_b2_);
  std::vector<model::LayerPrefix> out;
  for (std::size_t l = 0; l < n_layers_; ++l) {
    out.push_back({ad::slice(all, 1, 2 * l * d_model_, d_model_),
                   ad::slice(all, 1, (2 * l + 1) * d_model_, d_model_)});
  }
  return out;
}

model::ParameterList PrefixBank::parameters() const {
  model::ParameterList out;
  if (!spec_.reparameterize) {
    for (std::size_t l = 0; l < direct_.size(); ++l) {
      const std::string base = "adapter.prefix." + std::to_string(l);
      out.push_back({base + ".key", direct_[l].key});
      out.push_back({base + ".value", direct_[l].value});
    }
  } else {
    out.push_back({"adapter.prefix.raw", raw_});
    out.push_back({"adapter.prefix.mlp.W1", mlp_w1_});
    out.push_back({"adapter.prefix.mlp.b1", mlp_b1_});
    out.push_back({"adapter.prefix.mlp.W2", mlp_w2_});
    out.push_back({"adapter.prefix.mlp.b2", mlp_b2_});
  }
  return out;
}

ad::Tensor apply_lora(const ad::Tensor& weight, const ad::Tensor& a, const ad::Tensor& b,
                      double alpha, std::size_t rank) {
  if (weight.dim() != 2 || a.dim() != 2 || b.dim() != 2 || a.rows() != rank || b.cols() != rank ||
      b.rows() != weight.rows() || a.cols() != weight.cols()) {
    throw DimensionError("LoRA factors " + ad::to_string(b.shape()) + " x " +
                         ad::to_string(a.shape()) + " do not match weight " +
                         ad::to_string(weight.shape()) + " at rank " + std::to_string(rank));
  }
  return ad::add(weight, ad::scale(ad::matmul(b, a), alpha / static_cast<double>(rank)));
}

LoraBank::LoraBank(const LoraSpec& spec, const model::EncoderConfig& config, Rng& rng) : spec_(spec) {
  if (spec.rank < 1) throw ConfigError("LoRA rank must be at least 1");
  if (spec.targets.empty()) throw ConfigError("LoRA needs at least one target projection");
  const std::size_t d = config.d_model;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    std::vector<LoraPair> pairs;
    for (auto t : spec.targets) {
      std::vector<double> a(spec.rank * d);
      for (auto& v : a) v = bound * (2.0 * rng.uniform() - 1.0);
      pairs.push_back({t, trainable(ad::Tensor::from_data({spec.rank, d}, std::move(a))),
                       trainable(ad::Tensor::zeros({d, spec.rank}))});
    }
    layers_.push_back(std::move(pairs));
  }
}

std::vector<std::array<ad::Tensor, 4>> LoraBank::effective_weights(const model::EncoderModel& model) const {
  std::vector<std::array<ad::Tensor, 4>> out(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (const auto& pair : layers_[l]) {
      const auto i = static_cast<std::size_t>(pair.target);
      out[l][i] = apply_lora(model.layer(l).attn.weight[i], pair.a, pair.b, spec_.alpha, spec_.rank);
    }
  }
  return out;
}

model::ParameterList LoraBank::parameters() const {
  model::ParameterList out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (const auto& pair : layers_[l]) {
      const std::string base =
          "adapter.lora." + std::to_string(l) + "." + std::string(model::to_string(pair.target));
      out.push_back({base + ".A", pair.a});
      out.push_back({base + ".B", pair.b});
    }
  }
  return out;
}

void AdapterSpec::validate() const {
  std::visit(
      [](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, technique::SoftPrompt>) {
          if (t.bank.p_pre < 1 || t.bank.p_post != 0) {
            throw ConfigError("soft_prompt needs p_pre >= 1 and p_post == 0");
          }
        } else if constexpr (std::is_same_v<T, technique::WrappedSoftPrompt>) {
          if (t.bank.p_pre < 1 || t.bank.p_post < 1) {
            throw ConfigError("wrapped_soft_prompt needs p_pre >= 1 and p_post >= 1");
          }
        } else if constexpr (std::is_same_v<T, technique::SoftPlusHardPrompt>) {
          if (t.bank.p_pre < 1 || t.bank.p_post != 0) {
            throw ConfigError("soft_plus_hard_prompt needs p_pre >= 1 and p_post == 0");
          }
        } else if constexpr (std::is_same_v<T, technique::PrefixTuning>) {
          if (t.prefix.prefix_len < 1) throw ConfigError("prefix_tuning needs prefix_len >= 1");
        } else if constexpr (std::is_same_v<T, technique::PrefixPlusLora>) {
          if (t.lora.rank < 1) throw ConfigError("LoRA rank must be at least 1");
          if (!(t.lora.alpha > 0.0)) throw ConfigError("LoRA alpha must be positive");
          std::set<model::Projection> seen(t.lora.targets.begin(), t.lora.targets.end());
          if (seen.empty() || seen.size() != t.lora.targets.size()) {
            throw ConfigError("LoRA targets must be a non-empty set of distinct projections");
          }
        }
      },
      technique);
}

std::string AdapterSpec::kind() const {
  static constexpr std::array<const char*, 7> names = {
      "full_fine_tune",        "prompt_tuning", "soft_prompt",     "wrapped_soft_prompt",
      "soft_plus_hard_prompt", "prefix_tuning", "prefix_plus_lora"};
  return names[technique.index()];
}

const HardPromptSpec* AdapterSpec::hard_prompt() const {
  if (auto* p = std::get_if<technique::PromptTuning>(&technique)) return &p->hard;
  if (auto* p = std::get_if<technique::SoftPlusHardPrompt>(&technique)) return &p->hard;
  return nullptr;
}

bool AdapterSpec::uses_verbalizer() const { return hard_prompt() != nullptr; }

AdaptedModel::AdaptedModel(model::EncoderModel encoder, AdapterSpec spec, text::Vocabulary vocab,
                           std::vector<std::string> labels, std::size_t max_length,
                           std::uint64_t seed)
    : encoder_(std::move(encoder)),
      spec_(std::move(spec)),
      vocab_(std::move(vocab)),
      max_length_(max_length) {
  spec_.validate();
  if (vocab_.size() != encoder_.config().vocab_size) {
    throw DataError("vocabulary size " + std::to_string(vocab_.size()) +
                    " does not match encoder vocab_size " +
                    std::to_string(encoder_.config().vocab_size));
  }
  model::set_trainable(encoder_, spec_.freeze);
  Rng rng(seed);
  const auto& cfg = encoder_.config();

  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, technique::SoftPrompt> ||
                      std::is_same_v<T, technique::WrappedSoftPrompt> ||
                      std::is_same_v<T, technique::SoftPlusHardPrompt>) {
          soft_ = SoftPromptBank::create(t.bank, encoder_.token_embeddings(), rng);
        } else if constexpr (std::is_same_v<T, technique::PrefixTuning>) {
          prefix_.emplace(t.prefix, cfg, rng);
        } else if constexpr (std::is_same_v<T, technique::PrefixPlusLora>) {
          if (t.prefix.prefix_len > 0) prefix_.emplace(t.prefix, cfg, rng);
          lora_.emplace(t.lora, cfg, rng);
        }
      },
      spec_.technique);

  if (const auto* hard = spec_.hard_prompt()) {
    const auto words = hard->verbalizer.labels();
    if (std::set<std::string>(words.begin(), words.end()) !=
            std::set<std::string>(labels.begin(), labels.end()) ||
        words.size() != labels.size()) {
      throw ConfigError("verbalizer classes do not match the dataset label set");
    }
    labels_ = words;
    verbalizer_ids_ = hard->verbalizer.token_ids(vocab_);
    for (const auto& w : hard->prompt.fixed_words()) {
      if (!vocab_.contains(w)) {
        throw DataError("template word '" + w + "' is not in the vocabulary");
      }
    }
  } else {
    if (labels.empty()) throw ConfigError("classifier needs at least one label");
    labels_ = std::move(labels);
    head_.emplace("head.cls", cfg.d_model, labels_.size(), rng);
  }
  const std::size_t virtual_tokens = soft_ ? soft_->p_pre() + soft_->p_post() : 0;
  if (max_length_ < 2 || max_length_ + virtual_tokens > cfg.max_positions) {
    throw ConfigError("max_length " + std::to_string(max_length_) + " plus " +
                      std::to_string(virtual_tokens) + " virtual tokens does not fit max_positions " +
                      std::to_string(cfg.max_positions));
  }
}

text::EncodedExample AdaptedModel::encode(const text::RawExample& example) const {
  const auto it = std::find(labels_.begin(), labels_.end(), example.label);
  if (it == labels_.end()) throw DataError("label '" + example.label + "' is not a class of this model");
  const int label_id = static_cast<int>(it - labels_.begin());
  if (const auto* hard = spec_.hard_prompt()) {
    return encode_with_template(example, hard->prompt, vocab_, label_id, max_length_);
  }
  return text::encode_plain(example, vocab_, label_id, max_length_);
}

model::Injections AdaptedModel::injections() const {
  model::Injections inj;
  if (prefix_) inj.prefixes = prefix_->materialize();
  if (lora_) inj.weight_overrides = lora_->effective_weights(encoder_);
  return inj;
}

model::EncoderOutput AdaptedModel::forward(const text::EncodedExample& example,
                                           const model::ForwardOptions& opts) const {
  const auto inj = injections();
  if (!soft_) return encoder_.forward(example.token_ids, inj, opts);
  if (std::holds_alternative<technique::SoftPlusHardPrompt>(spec_.technique)) {
    return encoder_.forward_embedded(apply_soft_plus_hard(*soft_, example, encoder_).sequence, inj, opts);
  }
  auto seq = apply_soft_prompt(*soft_, encoder_.embed_tokens(example.token_ids),
                               encoder_.config().max_positions);
  return encoder_.forward_embedded(seq.sequence, inj, opts);
}

ad::Tensor AdaptedModel::logits(const text::EncodedExample& example,
                                const model::ForwardOptions& opts) const {
  const auto out = forward(example, opts);
  const std::size_t shift = soft_ ? soft_->p_pre() : 0;
  if (spec_.uses_verbalizer()) {
    if (!example.mask_position) throw ConfigError("example has no [MASK] position");
    const int pos = static_cast<int>(shift + *example.mask_position);
    return ad::select_cols(encoder_.mlm_logits(out.hidden, std::span(&pos, 1)), verbalizer_ids_);
  }
  return head_->forward(model::pooled_representation(out.hidden, shift));
}

model::ParameterList AdaptedModel::adapter_parameters() const {
  model::ParameterList out;
  if (soft_) {
    auto p = soft_->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (prefix_) {
    auto p = prefix_->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (lora_) {
    auto p = lora_->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

model::ParameterList AdaptedModel::task_head_parameters() const {
  return head_ ? head_->parameters() : model::ParameterList{};
}

model::ParameterList AdaptedModel::parameters() const {
  model::ParameterList out = encoder_.body_parameters();
  if (spec_.uses_verbalizer()) {
    auto m = encoder_.mlm_head_parameters();
    out.insert(out.end(), m.begin(), m.end());
  }
  auto a = adapter_parameters();
  out.insert(out.end(), a.begin(), a.end());
  auto h = task_head_parameters();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

model::ParameterList AdaptedModel::all_parameters() const {
  model::ParameterList out = encoder_.parameters();
  auto a = adapter_parameters();
  out.insert(out.end(), a.begin(), a.end());
  auto h = task_head_parameters();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

ParameterReport AdaptedModel::parameter_report() const {
  ParameterReport r;
  const auto body = encoder_.body_parameters();
  const auto mlm = encoder_.mlm_head_parameters();
  const auto adapter = adapter_parameters();
  const auto head = task_head_parameters();
  r.body_total = model::count_parameters(body);
  r.body_trainable = model::count_trainable(body);
  r.mlm_head_total = model::count_parameters(mlm);
  r.mlm_head_trainable = model::count_trainable(mlm);
  r.adapter_total = model::count_parameters(adapter);
  r.adapter_trainable = model::count_trainable(adapter);
  r.task_head_total = model::count_parameters(head);
  r.task_head_trainable = model::count_trainable(head);
  r.total = r.body_total + r.mlm_head_total + r.adapter_total + r.task_head_total;
  r.trainable = r.body_trainable + r.mlm_head_trainable + r.adapter_trainable + r.task_head_trainable;
  r.fraction = static_cast<double>(r.trainable) / static_cast<double>(r.total);
  r.fraction_excluding_heads = static_cast<double>(r.body_trainable + r.adapter_trainable) /
                               static_cast<double>(r.body_total + r.adapter_total);
  return r;
}

ParameterReport trainable_parameter_report(const AdaptedModel& model) { return model.parameter_report(); }

}  // namespace peftlab::peft
