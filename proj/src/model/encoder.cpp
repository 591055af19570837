#include "peftlab/encoder.hpp"

#include <cmath>

#include "peftlab/errors.hpp"

namespace peftlab::model {

namespace {

constexpr double kInitStd = 0.02;

ad::Tensor param(ad::Shape shape, Rng& rng) {
  auto t = ad::Tensor::randn(std::move(shape), rng, kInitStd);
  t.set_requires_grad(true);
  return t;
}

ad::Tensor constant_param(ad::Shape shape, double v) {
  auto t = ad::Tensor::full(std::move(shape), v);
  t.set_requires_grad(true);
  return t;
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

}  // namespace

void EncoderConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0 || vocab_size == 0 ||
      max_positions == 0) {
    throw ConfigError("encoder config: all sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("encoder config: d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("encoder config: dropout_rate must lie in [0, 1)");
  }
}

std::size_t count_parameters(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

std::size_t count_trainable(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) {
    if (p.tensor.requires_grad()) n += p.tensor.numel();
  }
  return n;
}

std::string_view to_string(Projection p) {
  static constexpr std::array<std::string_view, 4> names = {"Wq", "Wk", "Wv", "Wo"};
  return names[static_cast<std::size_t>(p)];
}

Projection parse_projection(std::string_view name) {
  for (auto p : {Projection::Q, Projection::K, Projection::V, Projection::O}) {
    if (name == to_string(p)) return p;
  }
  throw ConfigError("unknown projection '" + std::string(name) + "' (expected Wq, Wk, Wv or Wo)");
}

EncoderModel::EncoderModel(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.d_model, f = config_.d_ff;
  tok_emb_ = param({config_.vocab_size, d}, rng);
  pos_emb_ = param({config_.max_positions, d}, rng);
  emb_ln_gamma_ = constant_param({d}, 1.0);
  emb_ln_beta_ = constant_param({d}, 0.0);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    LayerParams lp;
    for (std::size_t p = 0; p < 4; ++p) {
      lp.attn.weight[p] = param({d, d}, rng);
      lp.attn.bias[p] = constant_param({d}, 0.0);
    }
    lp.ln1_gamma = constant_param({d}, 1.0);
    lp.ln1_beta = constant_param({d}, 0.0);
    lp.ffn_w1 = param({f, d}, rng);
    lp.ffn_b1 = constant_param({f}, 0.0);
    lp.ffn_w2 = param({d, f}, rng);
    lp.ffn_b2 = constant_param({d}, 0.0);
    lp.ln2_gamma = constant_param({d}, 1.0);
    lp.ln2_beta = constant_param({d}, 0.0);
    layers_.push_back(std::move(lp));
  }
  mlm_bias_ = constant_param({config_.vocab_size}, 0.0);
  if (!config_.tie_mlm_head) mlm_decoder_ = param({config_.vocab_size, d}, rng);
  register_parameters();
}

void EncoderModel::register_parameters() {
  params_.clear();
  params_.push_back({"embeddings.token", tok_emb_});
  params_.push_back({"embeddings.position", pos_emb_});
  params_.push_back({"embeddings.ln.gamma", emb_ln_gamma_});
  params_.push_back({"embeddings.ln.beta", emb_ln_beta_});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string base = "layer." + std::to_string(l) + ".";
    auto& lp = layers_[l];
    static constexpr std::array<const char*, 4> bias_names = {"bq", "bk", "bv", "bo"};
    for (std::size_t p = 0; p < 4; ++p) {
      params_.push_back({base + "attn." + std::string(to_string(static_cast<Projection>(p))),
                         lp.attn.weight[p]});
      params_.push_back({base + "attn." + bias_names[p], lp.attn.bias[p]});
    }
    params_.push_back({base + "ln1.gamma", lp.ln1_gamma});
    params_.push_back({base + "ln1.beta", lp.ln1_beta});
    params_.push_back({base + "ffn.W1", lp.ffn_w1});
    params_.push_back({base + "ffn.b1", lp.ffn_b1});
    params_.push_back({base + "ffn.W2", lp.ffn_w2});
    params_.push_back({base + "ffn.b2", lp.ffn_b2});
    params_.push_back({base + "ln2.gamma", lp.ln2_gamma});
    params_.push_back({base + "ln2.beta", lp.ln2_beta});
  }
  params_.push_back({"mlm.bias", mlm_bias_});
  if (mlm_decoder_.defined()) params_.push_back({"mlm.decoder", mlm_decoder_});
}

EncoderModel EncoderModel::clone() const {
  EncoderModel copy(config_, 0);
  copy.copy_weights_from(*this);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    copy.params_[i].tensor.set_requires_grad(params_[i].tensor.requires_grad());
  }
  return copy;
}

void EncoderModel::copy_weights_from(const EncoderModel& other) {
  if (!(other.config_ == config_)) throw ConfigError("copy_weights_from: encoder configs differ");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = other.params_[i].tensor.data();
    auto dst = params_[i].tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

ParameterList EncoderModel::body_parameters() const {
  ParameterList out;
  for (const auto& p : params_) {
    if (!starts_with(p.name, "mlm.")) out.push_back(p);
  }
  return out;
}

ParameterList EncoderModel::mlm_head_parameters() const {
  ParameterList out;
  for (const auto& p : params_) {
    if (starts_with(p.name, "mlm.")) out.push_back(p);
  }
  return out;
}

ad::Tensor EncoderModel::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

ad::Tensor EncoderModel::embed_tokens(std::span<const int> ids) const {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw DimensionError("token id " + std::to_string(id) + " outside vocabulary of size " +
                           std::to_string(config_.vocab_size));
    }
  }
  return ad::embedding(tok_emb_, ids);
}

EncoderOutput EncoderModel::forward(std::span<const int> ids, const Injections& inj,
                                    const ForwardOptions& opts) const {
  ad::Tensor x = embed_tokens(ids);
  if (inj.pre_tokens.defined() || inj.post_tokens.defined()) {
    x = ad::concat({inj.pre_tokens, x, inj.post_tokens}, 0);
  }
  return forward_embedded(x, inj, opts);
}

EncoderOutput EncoderModel::forward_embedded(const ad::Tensor& embedded, const Injections& inj,
                                             const ForwardOptions& opts) const {
  const std::size_t d = config_.d_model, heads = config_.n_heads, dh = d / heads;
  if (embedded.dim() != 2 || embedded.cols() != d) {
    throw DimensionError("encoder input must be [sequence, " + std::to_string(d) + "], got " +
                         ad::to_string(embedded.shape()));
  }
  const std::size_t n = embedded.rows();
  if (n == 0) throw DimensionError("encoder input is empty");
  if (n > config_.max_positions) {
    throw DimensionError("sequence length " + std::to_string(n) + " exceeds max_positions " +
                         std::to_string(config_.max_positions));
  }
  if (!inj.prefixes.empty() && inj.prefixes.size() != config_.n_layers) {
    throw DimensionError("prefix injection needs one entry per layer");
  }
  if (!inj.weight_overrides.empty() && inj.weight_overrides.size() != config_.n_layers) {
    throw DimensionError("weight overrides need one entry per layer");
  }
  const bool use_dropout = opts.train && config_.dropout_rate > 0.0;
  if (use_dropout && opts.rng == nullptr) throw ConfigError("training forward needs an Rng for dropout");
  auto drop = [&](const ad::Tensor& t) {
    return use_dropout ? ad::dropout(t, config_.dropout_rate, *opts.rng) : t;
  };

  EncoderOutput out;
  ad::Tensor h = ad::add(embedded, ad::slice(pos_emb_, 0, 0, n));
  h = drop(ad::layer_norm(h, emb_ln_gamma_, emb_ln_beta_));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const auto& lp = layers_[l];
    auto weight = [&](Projection p) -> const ad::Tensor& {
      const auto i = static_cast<std::size_t>(p);
      if (!inj.weight_overrides.empty() && inj.weight_overrides[l][i].defined()) {
        const auto& w = inj.weight_overrides[l][i];
        if (w.shape() != lp.attn.weight[i].shape()) {
          throw DimensionError("weight override shape mismatch at layer " + std::to_string(l));
        }
        return w;
      }
      return lp.attn.weight[i];
    };
    ad::Tensor q = ad::linear(h, weight(Projection::Q), lp.attn.bias[0]);
    ad::Tensor k = ad::linear(h, weight(Projection::K), lp.attn.bias[1]);
    ad::Tensor v = ad::linear(h, weight(Projection::V), lp.attn.bias[2]);
    if (!inj.prefixes.empty()) {
      const auto& pre = inj.prefixes[l];
      if (pre.key.dim() != 2 || pre.key.cols() != d || pre.value.shape() != pre.key.shape()) {
        throw DimensionError("prefix key/value must be [prefix_len, d_model] at layer " +
                             std::to_string(l));
      }
      k = ad::concat({pre.key, k}, 0);
      v = ad::concat({pre.value, v}, 0);
    }
    std::vector<ad::Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      ad::Tensor qh = ad::slice(q, 1, hd * dh, dh);
      ad::Tensor kh = ad::slice(k, 1, hd * dh, dh);
      ad::Tensor vh = ad::slice(v, 1, hd * dh, dh);
      ad::Tensor probs = ad::softmax(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), -1);
      if (opts.keep_attention) out.attention.push_back(probs);
      head_out.push_back(ad::matmul(probs, vh));
    }
    ad::Tensor att = heads == 1 ? head_out[0] : ad::concat(head_out, 1);
    att = drop(ad::linear(att, weight(Projection::O), lp.attn.bias[3]));
    h = ad::layer_norm(ad::add(h, att), lp.ln1_gamma, lp.ln1_beta);
    ad::Tensor ff = ad::gelu(ad::linear(h, lp.ffn_w1, lp.ffn_b1));
    ff = drop(ad::linear(ff, lp.ffn_w2, lp.ffn_b2));
    h = ad::layer_norm(ad::add(h, ff), lp.ln2_gamma, lp.ln2_beta);
  }
  out.hidden = h;
  return out;
}

ad::Tensor EncoderModel::mlm_logits(const ad::Tensor& hidden, std::span<const int> positions) const {
  ad::Tensor rows = ad::select_rows(hidden, positions);
  return ad::linear(rows, config_.tie_mlm_head ? tok_emb_ : mlm_decoder_, mlm_bias_);
}

ad::Tensor pooled_representation(const ad::Tensor& hidden, std::size_t index) {
  if (hidden.dim() != 2 || hidden.rows() == 0) {
    throw DimensionError("pooled_representation of an empty sequence");
  }
  return ad::slice(hidden, 0, index, 1);
}

std::string to_string(const FreezePolicy& p) {
  switch (p.kind) {
    case FreezePolicy::Kind::TrainAll: return "train_all";
    case FreezePolicy::Kind::FreezeEmbeddingsOnly: return "freeze_embeddings_only";
    case FreezePolicy::Kind::FreezeFirstK: return "freeze_first_k_layers";
    case FreezePolicy::Kind::FreezeAll: return "freeze_all";
  }
  return "unknown";
}

FreezePolicy parse_freeze_policy(std::string_view kind, std::size_t k) {
  if (kind == "train_all") return FreezePolicy::train_all();
  if (kind == "freeze_embeddings_only") return FreezePolicy::embeddings_only();
  if (kind == "freeze_first_k_layers") return FreezePolicy::first_k_layers(k);
  if (kind == "freeze_all") return FreezePolicy::all();
  throw ConfigError("unknown freeze policy '" + std::string(kind) + "'");
}

void set_trainable(EncoderModel& model, const FreezePolicy& policy) {
  const std::size_t layers = model.config().n_layers;
  if (policy.kind == FreezePolicy::Kind::FreezeFirstK && policy.k > layers) {
    throw ConfigError("cannot freeze the first " + std::to_string(policy.k) + " layers of a " +
                      std::to_string(layers) + "-layer encoder");
  }
  for (const auto& p : model.parameters()) {
    bool frozen = false;
    switch (policy.kind) {
      case FreezePolicy::Kind::TrainAll: break;
      case FreezePolicy::Kind::FreezeAll: frozen = true; break;
      case FreezePolicy::Kind::FreezeEmbeddingsOnly:
        frozen = starts_with(p.name, "embeddings.");
        break;
      case FreezePolicy::Kind::FreezeFirstK:
        frozen = starts_with(p.name, "embeddings.");
        for (std::size_t l = 0; l < policy.k && !frozen; ++l) {
          frozen = starts_with(p.name, "layer." + std::to_string(l) + ".");
        }
        break;
    }
    ad::Tensor t = p.tensor;
    t.set_requires_grad(!frozen);
  }
}

LinearHead::LinearHead(std::string name, std::size_t d_in, std::size_t n_out, Rng& rng)
    : name_(std::move(name)),
      weight_(param({n_out, d_in}, rng)),
      bias_(constant_param({n_out}, 0.0)) {}

ad::Tensor LinearHead::forward(const ad::Tensor& x) const { return ad::linear(x, weight_, bias_); }

ParameterList LinearHead::parameters() const {
  return {{name_ + ".W", weight_}, {name_ + ".b", bias_}};
}

LinearHead LinearHead::clone() const {
  LinearHead h;
  h.name_ = name_;
  h.weight_ = weight_.detach();
  h.weight_.set_requires_grad(weight_.requires_grad());
  h.bias_ = bias_.detach();
  h.bias_.set_requires_grad(bias_.requires_grad());
  return h;
}

}  // namespace peftlab::model
