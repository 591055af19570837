#include <cstdio>
#include <fstream>
#include <sstream>

#include "peftlab/app.hpp"
#include "peftlab/errors.hpp"
#include "peftlab/fixtures.hpp"

namespace peftlab::app {

namespace {

text::DatasetTag config_tag(const std::string& name) {
  try {
    return text::parse_dataset_tag(name);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

Json dataset_defaults(const std::string& tag, std::size_t n_per_class) {
  return Json{{"source", "synthetic"}, {"tag", tag}, {"path", ""}, {"n_per_class", n_per_class}};
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Coerces `value` to the JSON type of `like`, so a materialized config dumps
// identically however the user spelled a number.
Json coerce(const Json& like, const Json& value, const std::string& path) {
  auto bad = [&](const char* want) {
    return ConfigError("config key '" + path + "' must be " + want + ", got " + value.dump());
  };
  switch (like.type()) {
    case Json::value_t::number_float:
      if (!value.is_number()) throw bad("a number");
      return value.get<double>();
    case Json::value_t::number_unsigned:
      if (value.is_number_unsigned()) return value;
      if (value.is_number_integer() && value.get<std::int64_t>() >= 0) return value.get<std::uint64_t>();
      if (value.is_number_float() && value.get<double>() >= 0 &&
          value.get<double>() == static_cast<double>(static_cast<std::uint64_t>(value.get<double>()))) {
        return static_cast<std::uint64_t>(value.get<double>());
      }
      throw bad("a non-negative integer");
    case Json::value_t::number_integer:
      if (!value.is_number_integer()) throw bad("an integer");
      return value;
    case Json::value_t::boolean:
      if (!value.is_boolean()) throw bad("true or false");
      return value;
    case Json::value_t::string:
      if (!value.is_string()) throw bad("a string");
      return value;
    default:
      return value;
  }
}

void merge_into(Json& base, const Json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config section '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string here = join(path, key);
    if (!base.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    Json& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, here);
    } else if (slot.is_array()) {
      if (!value.is_array()) throw ConfigError("config key '" + here + "' must be a list");
      if (here == "pretrain.sources") {
        Json merged = Json::array();
        for (const auto& item : value) {
          Json d = dataset_defaults("Illness", 100);
          merge_into(d, item, here + "[]");
          merged.push_back(std::move(d));
        }
        slot = std::move(merged);
      } else {
        slot = value;
      }
    } else {
      slot = coerce(slot, value, here);
    }
  }
}

std::size_t as_size(const Json& j, const char* key) { return j.at(key).get<std::size_t>(); }

DatasetConfig parse_dataset(const Json& j) {
  DatasetConfig d;
  d.source = j.at("source").get<std::string>();
  if (d.source != "synthetic" && d.source != "file") {
    throw ConfigError("dataset.source must be 'synthetic' or 'file', got '" + d.source + "'");
  }
  d.tag = config_tag(j.at("tag").get<std::string>());
  d.path = j.at("path").get<std::string>();
  d.n_per_class = as_size(j, "n_per_class");
  if (d.source == "file" && d.path.empty()) throw ConfigError("dataset.path is required for file datasets");
  if (d.source == "synthetic" && d.tag == text::DatasetTag::Synthetic) {
    throw ConfigError("synthetic datasets need a schema tag (PHM2017, RHMD or Illness)");
  }
  return d;
}

}  // namespace

Json default_run_config() {
  Json j;
  j["seed"] = std::uint64_t{0};
  j["dataset"] = dataset_defaults("RHMD", 143);
  j["split"] = {{"train_ratio", 0.7}, {"k_folds", std::uint64_t{5}}, {"folds", {0, 1, 2, 3, 4}}};
  j["encoder"] = {{"n_layers", std::uint64_t{4}},     {"n_heads", std::uint64_t{4}},
                  {"d_model", std::uint64_t{128}},    {"d_ff", std::uint64_t{512}},
                  {"max_positions", std::uint64_t{128}}, {"dropout_rate", 0.1},
                  {"tie_mlm_head", true},             {"init", ""}};
  j["vocab"] = {{"min_count", std::uint64_t{1}}};
  j["max_length"] = std::uint64_t{64};
  j["adapter"] = {{"technique", "full_fine_tune"},
                  {"template", ""},
                  {"verbalizer", ""},
                  {"soft_prompt", {{"p_pre", std::uint64_t{8}}, {"p_post", std::uint64_t{0}}}},
                  {"prefix", {{"prefix_len", std::uint64_t{4}}, {"reparameterize", false}}},
                  {"lora", {{"rank", std::uint64_t{4}}, {"alpha", 8.0}, {"targets", {"Wq", "Wv"}}}}};
  j["freeze"] = {{"policy", "train_all"}, {"k", std::uint64_t{0}}};
  j["train"] = {{"batch_size", std::uint64_t{8}}, {"epochs", std::uint64_t{5}}, {"lr_max", 3e-5},
                {"lr_min", 1e-8},                 {"weight_decay", 0.001},      {"beta1", 0.9},
                {"beta2", 0.999},                 {"eps", 1e-8},                {"clip_norm", 0.0}};
  j["pos"] = {{"mode", "none"},      {"epochs", std::uint64_t{5}}, {"n_sentences", std::uint64_t{600}},
              {"corpus_path", ""},   {"checkpoint", ""},           {"lr_max", 1e-3},
              {"fusion_mode", "concat"}, {"train_both", false}};
  j["pretrain"] = {{"sources", Json::array()},
                   {"heldout_fraction", 0.1},
                   {"mlm",
                    {{"mask_rate", 0.15},
                     {"replace_mask", 0.8},
                     {"replace_random", 0.1},
                     {"epochs", std::uint64_t{5}},
                     {"batch_size", std::uint64_t{8}},
                     {"lr_max", 1e-3},
                     {"lr_min", 1e-8},
                     {"weight_decay", 0.001}}}};
  return j;
}

Json materialize(const Json& user) {
  Json cfg = default_run_config();
  merge_into(cfg, user.is_null() ? Json::object() : user, "");
  auto& adapter = cfg["adapter"];
  const auto tag = config_tag(cfg["dataset"]["tag"].get<std::string>());
  const auto [tkey, vkey] = peft::default_fixture_keys(tag);
  if (adapter["template"].get<std::string>().empty()) adapter["template"] = tkey;
  if (adapter["verbalizer"].get<std::string>().empty()) adapter["verbalizer"] = vkey;
  parse_run_config(cfg);  // full validation
  return cfg;
}

void apply_override(Json& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  Json* node = &cfg;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    if (!node->is_object()) *node = Json::object();
    if (i + 1 == parts.size()) {
      (*node)[parts[i]] = value;
    } else {
      node = &(*node)[parts[i]];
    }
  }
}

std::string config_hash(const Json& materialized) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(materialized.dump())));
  return buf;
}

RunConfig parse_run_config(const Json& j) {
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dataset = parse_dataset(j.at("dataset"));

    const auto& split = j.at("split");
    c.train_ratio = split.at("train_ratio").get<double>();
    c.k_folds = as_size(split, "k_folds");
    c.folds = split.at("folds").get<std::vector<std::size_t>>();
    if (!(c.train_ratio > 0.0 && c.train_ratio < 1.0)) throw ConfigError("split.train_ratio must lie in (0, 1)");
    if (c.k_folds < 2) throw ConfigError("split.k_folds must be at least 2");
    if (c.folds.empty()) throw ConfigError("split.folds must name at least one fold");
    for (auto f : c.folds) {
      if (f >= c.k_folds) throw ConfigError("split.folds entry " + std::to_string(f) + " >= k_folds");
    }

    const auto& e = j.at("encoder");
    c.encoder.n_layers = as_size(e, "n_layers");
    c.encoder.n_heads = as_size(e, "n_heads");
    c.encoder.d_model = as_size(e, "d_model");
    c.encoder.d_ff = as_size(e, "d_ff");
    c.encoder.max_positions = as_size(e, "max_positions");
    c.encoder.dropout_rate = e.at("dropout_rate").get<double>();
    c.encoder.tie_mlm_head = e.at("tie_mlm_head").get<bool>();
    c.encoder_init = e.at("init").get<std::string>();
    c.encoder.vocab_size = 1;
    c.encoder.validate();

    c.vocab_min_count = j.at("vocab").at("min_count").get<int>();
    if (c.vocab_min_count < 1) throw ConfigError("vocab.min_count must be at least 1");
    c.max_length = j.at("max_length").get<std::size_t>();

    const auto& a = j.at("adapter");
    c.technique = a.at("technique").get<std::string>();
    c.soft_prompt = {as_size(a.at("soft_prompt"), "p_pre"), as_size(a.at("soft_prompt"), "p_post")};
    c.prefix = {as_size(a.at("prefix"), "prefix_len"), a.at("prefix").at("reparameterize").get<bool>()};
    c.lora.rank = as_size(a.at("lora"), "rank");
    c.lora.alpha = a.at("lora").at("alpha").get<double>();
    c.lora.targets.clear();
    for (const auto& t : a.at("lora").at("targets")) {
      const auto name = t.get<std::string>();
      bool found = false;
      for (std::size_t p = 0; p < 4; ++p) {
        if (model::to_string(static_cast<model::Projection>(p)) == name) {
          c.lora.targets.push_back(static_cast<model::Projection>(p));
          found = true;
        }
      }
      if (!found) throw ConfigError("unknown LoRA target '" + name + "' (expected Wq, Wk, Wv or Wo)");
    }
    c.template_key = a.at("template").get<std::string>();
    c.verbalizer_key = a.at("verbalizer").get<std::string>();
    // Fixture names must resolve before anything runs.
    peft::fixture_template(c.template_key);
    peft::fixture_verbalizer(c.verbalizer_key);

    const auto& f = j.at("freeze");
    c.freeze = model::parse_freeze_policy(f.at("policy").get<std::string>(), as_size(f, "k"));
    if (c.freeze.kind == model::FreezePolicy::Kind::FreezeFirstK && c.freeze.k > c.encoder.n_layers) {
      throw ConfigError("freeze.k exceeds encoder.n_layers");
    }

    const auto& t = j.at("train");
    c.train.batch_size = as_size(t, "batch_size");
    c.train.epochs = as_size(t, "epochs");
    c.train.lr_max = t.at("lr_max").get<double>();
    c.train.lr_min = t.at("lr_min").get<double>();
    c.train.adamw.weight_decay = t.at("weight_decay").get<double>();
    c.train.adamw.beta1 = t.at("beta1").get<double>();
    c.train.adamw.beta2 = t.at("beta2").get<double>();
    c.train.adamw.eps = t.at("eps").get<double>();
    c.train.adamw.clip_norm = t.at("clip_norm").get<double>();
    c.train.validate();

    const auto& p = j.at("pos");
    c.pos.mode = p.at("mode").get<std::string>();
    if (c.pos.mode != "none" && c.pos.mode != "intermediate" && c.pos.mode != "fusion") {
      throw ConfigError("pos.mode must be none, intermediate or fusion");
    }
    c.pos.epochs = as_size(p, "epochs");
    c.pos.n_sentences = as_size(p, "n_sentences");
    c.pos.corpus_path = p.at("corpus_path").get<std::string>();
    c.pos.checkpoint = p.at("checkpoint").get<std::string>();
    c.pos.lr_max = p.at("lr_max").get<double>();
    c.pos.fusion_mode = pos::parse_fusion_mode(p.at("fusion_mode").get<std::string>());
    c.pos.train_both = p.at("train_both").get<bool>();

    const auto& pt = j.at("pretrain");
    for (const auto& s : pt.at("sources")) c.pretrain.sources.push_back(parse_dataset(s));
    c.pretrain.heldout_fraction = pt.at("heldout_fraction").get<double>();
    if (!(c.pretrain.heldout_fraction > 0.0 && c.pretrain.heldout_fraction < 1.0)) {
      throw ConfigError("pretrain.heldout_fraction must lie in (0, 1)");
    }
    const auto& m = pt.at("mlm");
    c.pretrain.mlm.mask_rate = m.at("mask_rate").get<double>();
    c.pretrain.mlm.replace_mask = m.at("replace_mask").get<double>();
    c.pretrain.mlm.replace_random = m.at("replace_random").get<double>();
    c.pretrain.mlm.epochs = as_size(m, "epochs");
    c.pretrain.mlm.batch_size = as_size(m, "batch_size");
    c.pretrain.mlm.lr_max = m.at("lr_max").get<double>();
    c.pretrain.mlm.lr_min = m.at("lr_min").get<double>();
    c.pretrain.mlm.adamw.weight_decay = m.at("weight_decay").get<double>();
    c.pretrain.mlm.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  const auto spec = adapter_spec(c);
  spec.validate();
  // Catch a verbalizer meant for another dataset before any data is loaded.
  if (spec.uses_verbalizer() && c.dataset.tag != text::DatasetTag::Synthetic &&
      peft::fixture_verbalizer(c.verbalizer_key).labels() != text::label_set(c.dataset.tag)) {
    throw ConfigError("verbalizer '" + c.verbalizer_key + "' does not cover the " +
                      std::string(text::to_string(c.dataset.tag)) + " labels");
  }
  if (c.pos.mode == "fusion" && c.technique != "full_fine_tune") {
    throw ConfigError("representation fusion trains its own classifier; use technique full_fine_tune");
  }
  return c;
}

peft::AdapterSpec adapter_spec(const RunConfig& c) {
  peft::AdapterSpec spec;
  spec.freeze = c.freeze;
  auto hard = [&] { return peft::HardPromptSpec{peft::fixture_template(c.template_key), peft::fixture_verbalizer(c.verbalizer_key)}; };
  namespace t = peft::technique;
  if (c.technique == "full_fine_tune") {
    spec.technique = t::FullFineTune{};
  } else if (c.technique == "prompt_tuning") {
    spec.technique = t::PromptTuning{hard()};
  } else if (c.technique == "soft_prompt") {
    spec.technique = t::SoftPrompt{c.soft_prompt};
  } else if (c.technique == "wrapped_soft_prompt") {
    spec.technique = t::WrappedSoftPrompt{c.soft_prompt};
  } else if (c.technique == "soft_plus_hard_prompt") {
    spec.technique = t::SoftPlusHardPrompt{c.soft_prompt, hard()};
  } else if (c.technique == "prefix_tuning") {
    spec.technique = t::PrefixTuning{c.prefix};
  } else if (c.technique == "prefix_plus_lora") {
    spec.technique = t::PrefixPlusLora{c.prefix, c.lora};
  } else {
    throw ConfigError("unknown adapter technique '" + c.technique + "'");
  }
  return spec;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return j;
}

Json load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  Json user = path.empty() ? Json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(user, o);
  return materialize(user);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("failed writing " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace peftlab::app
