#include <algorithm>
#include <cstdio>
#include <future>
#include <sstream>
#include <thread>

#include "peftlab/app.hpp"
#include "peftlab/checkpoint.hpp"
#include "peftlab/errors.hpp"
#include "peftlab/fixtures.hpp"
#include "peftlab/log.hpp"

namespace peftlab::app {

namespace fs = std::filesystem;

namespace {

// Re-throws with the failing stage named, keeping the error category (and so
// the CLI exit code).
template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  auto prefix = [&](const std::exception& e) { return "stage '" + name + "': " + e.what(); };
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix(e));
  } catch (const DimensionError& e) {
    throw DimensionError(prefix(e));
  } catch (const DataError& e) {
    throw DataError(prefix(e));
  } catch (const TrainingError& e) {
    throw TrainingError(prefix(e));
  }
}

std::uint64_t seed_for(std::uint64_t seed, std::string_view purpose) { return derive_seed(seed, fnv1a(purpose)); }

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json encoder_config_json(const model::EncoderConfig& ec) {
  return {{"n_layers", ec.n_layers},           {"n_heads", ec.n_heads},
          {"d_model", ec.d_model},             {"d_ff", ec.d_ff},
          {"vocab_size", ec.vocab_size},       {"max_positions", ec.max_positions},
          {"dropout_rate", ec.dropout_rate},   {"tie_mlm_head", ec.tie_mlm_head}};
}

model::EncoderConfig encoder_config_from(const nlohmann::json& j) {
  model::EncoderConfig ec;
  ec.n_layers = j.at("n_layers").get<std::size_t>();
  ec.n_heads = j.at("n_heads").get<std::size_t>();
  ec.d_model = j.at("d_model").get<std::size_t>();
  ec.d_ff = j.at("d_ff").get<std::size_t>();
  ec.vocab_size = j.at("vocab_size").get<std::size_t>();
  ec.max_positions = j.at("max_positions").get<std::size_t>();
  ec.dropout_rate = j.at("dropout_rate").get<double>();
  ec.tie_mlm_head = j.at("tie_mlm_head").get<bool>();
  return ec;
}

std::vector<std::string> forced_words() {
  auto words = peft::fixture_words();
  for (auto& w : text::generator_words()) words.push_back(std::move(w));
  return words;
}

std::vector<text::RawExample> pick(const std::vector<text::RawExample>& data, const std::vector<std::size_t>& idx) {
  std::vector<text::RawExample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data.at(i));
  return out;
}

std::vector<text::EncodedExample> encode_all(const model::Classifier& m, const std::vector<text::RawExample>& xs) {
  std::vector<text::EncodedExample> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(m.encode(x));
  return out;
}

std::string absolute(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

// Absolute paths and, for a pretrained initialization, the stored encoder
// architecture. Idempotent.
Json resolve(const Json& materialized) {
  Json j = materialized;
  j["dataset"]["path"] = absolute(j["dataset"]["path"].get<std::string>());
  j["pos"]["corpus_path"] = absolute(j["pos"]["corpus_path"].get<std::string>());
  j["pos"]["checkpoint"] = absolute(j["pos"]["checkpoint"].get<std::string>());
  for (auto& s : j["pretrain"]["sources"]) s["path"] = absolute(s["path"].get<std::string>());
  const std::string init = absolute(j["encoder"]["init"].get<std::string>());
  j["encoder"]["init"] = init;
  if (!init.empty()) {
    const auto meta = model::read_manifest(fs::path(init) / "encoder").at("metadata");
    const auto ec = encoder_config_from(meta.at("encoder_config"));
    auto& e = j["encoder"];
    e["n_layers"] = ec.n_layers;
    e["n_heads"] = ec.n_heads;
    e["d_model"] = ec.d_model;
    e["d_ff"] = ec.d_ff;
    e["max_positions"] = ec.max_positions;
    e["dropout_rate"] = ec.dropout_rate;
    e["tie_mlm_head"] = ec.tie_mlm_head;
  }
  return materialize(j);
}

model::EncoderModel make_base_encoder(const RunConfig& cfg, const text::Vocabulary& vocab, bool load_init) {
  model::EncoderConfig ec = cfg.encoder;
  ec.vocab_size = vocab.size();
  model::EncoderModel enc(ec, seed_for(cfg.seed, "encoder"));
  if (load_init && !cfg.encoder_init.empty()) {
    model::load_checkpoint(fs::path(cfg.encoder_init) / "encoder", enc.parameters(), true);
  }
  return enc;
}

void check_vocab_matches(const text::Vocabulary& vocab, const fs::path& dir) {
  const auto other = text::Vocabulary::load(dir / "vocab.txt");
  if (other.fingerprint() != vocab.fingerprint()) {
    throw DataError("vocabulary of " + dir.string() + " does not match this run's vocabulary");
  }
}

train::TrainConfig pos_train_config(const RunConfig& cfg) {
  train::TrainConfig tc = cfg.train;
  tc.epochs = cfg.pos.epochs;
  tc.seed = seed_for(cfg.seed, "pos-train");
  tc.lr_max = cfg.pos.lr_max;
  return tc;
}

std::vector<pos::PosExample> pos_corpus(const RunConfig& cfg) {
  if (!cfg.pos.corpus_path.empty()) return pos::load_pos_corpus(cfg.pos.corpus_path, pos::PosTagset::universal());
  return pos::synthetic_pos_corpus(cfg.pos.n_sentences, seed_for(cfg.seed, "pos-data"));
}

std::string technique_label(const RunConfig& cfg) {
  if (cfg.pos.mode == "fusion") return "representation_fusion_pos";
  if (cfg.pos.mode == "intermediate") return "intermediate_pos+" + cfg.technique;
  if (!cfg.encoder_init.empty()) return "mlm_pretrained+" + cfg.technique;
  return cfg.technique;
}

Json record_json(std::size_t fold, const train::EpochRecord& r) {
  return {{"fold", fold}, {"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_f1_micro", r.val_f1_micro}, {"lr_last", r.lr_last}};
}

}  // namespace

std::vector<text::RawExample> load_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  std::vector<text::RawExample> data;
  if (cfg.source == "synthetic") {
    data = text::generate_synthetic(cfg.tag, cfg.n_per_class, seed);
  } else {
    data = text::load_jsonl(cfg.path, cfg.tag);
  }
  if (data.empty()) throw DataError("dataset is empty");
  return data;
}

std::vector<std::string> labels_for(const DatasetConfig& cfg, const std::vector<text::RawExample>& data) {
  if (cfg.tag != text::DatasetTag::Synthetic) return text::label_set(cfg.tag);
  std::vector<std::string> out;
  for (const auto& l : text::label_set(text::DatasetTag::Synthetic)) {
    if (std::any_of(data.begin(), data.end(), [&](const text::RawExample& x) { return x.label == l; })) out.push_back(l);
  }
  return out;
}

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData d;
  d.examples = load_dataset(cfg.dataset, seed_for(cfg.seed, "data"));
  d.labels = labels_for(cfg.dataset, d.examples);
  d.split = text::make_split(d.examples.size(), cfg.train_ratio, cfg.k_folds, seed_for(cfg.seed, "split"));
  if (!cfg.encoder_init.empty()) {
    d.vocab = text::Vocabulary::load(fs::path(cfg.encoder_init) / "vocab.txt");
  } else {
    const auto train_part = pick(d.examples, d.split.train_indices);
    const auto forced = forced_words();
    d.vocab = text::build_vocab(train_part, cfg.vocab_min_count, forced);
  }
  return d;
}

std::unique_ptr<model::Classifier> build_classifier(const RunConfig& cfg, const text::Vocabulary& vocab,
                                                    const std::vector<std::string>& labels,
                                                    const model::EncoderModel& base,
                                                    const model::EncoderModel* pos_encoder) {
  const auto head_seed = seed_for(cfg.seed, "head");
  if (cfg.pos.mode == "fusion") {
    return std::make_unique<pos::FusionModel>(base.clone(), pos_encoder ? pos_encoder->clone() : base.clone(), vocab,
                                              labels, cfg.pos.fusion_mode, cfg.max_length, head_seed, cfg.freeze,
                                              cfg.pos.train_both);
  }
  const bool intermediate = cfg.pos.mode == "intermediate" && pos_encoder;
  return std::make_unique<peft::AdaptedModel>(intermediate ? pos_encoder->clone() : base.clone(), adapter_spec(cfg),
                                              vocab, labels, cfg.max_length, head_seed);
}

model::ParameterList checkpoint_parameters(const model::Classifier& m) {
  if (auto* a = dynamic_cast<const peft::AdaptedModel*>(&m)) return a->all_parameters();
  if (auto* f = dynamic_cast<const pos::FusionModel*>(&m)) return f->all_parameters();
  return m.parameters();
}

model::ParameterList adapter_checkpoint_parameters(const model::Classifier& m) {
  if (auto* a = dynamic_cast<const peft::AdaptedModel*>(&m)) {
    auto out = a->adapter_parameters();
    for (auto& p : a->task_head_parameters()) out.push_back(p);
    return out;
  }
  if (auto* f = dynamic_cast<const pos::FusionModel*>(&m)) return f->head().parameters();
  return {};
}

Json parameter_report_json(const model::Classifier& m) {
  if (auto* a = dynamic_cast<const peft::AdaptedModel*>(&m)) {
    const auto r = a->parameter_report();
    return {{"total", r.total},
            {"trainable", r.trainable},
            {"fraction", r.fraction},
            {"body_total", r.body_total},
            {"body_trainable", r.body_trainable},
            {"mlm_head_total", r.mlm_head_total},
            {"mlm_head_trainable", r.mlm_head_trainable},
            {"adapter_total", r.adapter_total},
            {"adapter_trainable", r.adapter_trainable},
            {"task_head_total", r.task_head_total},
            {"task_head_trainable", r.task_head_trainable},
            {"fraction_excluding_heads", r.fraction_excluding_heads}};
  }
  const auto params = m.parameters();
  const auto total = model::count_parameters(params), trainable = model::count_trainable(params);
  return {{"total", total},
          {"trainable", trainable},
          {"fraction", static_cast<double>(trainable) / static_cast<double>(total)}};
}

TrainOutcome run_train(const Json& materialized, const std::optional<fs::path>& out) {
  const Json config = stage("config", [&] { return resolve(materialized); });
  const RunConfig cfg = parse_run_config(config);
  const std::string hash = config_hash(config);

  PreparedData data = stage("data", [&] { return prepare_data(cfg); });
  model::EncoderModel base = stage("encoder", [&] { return make_base_encoder(cfg, data.vocab, true); });

  std::optional<model::EncoderModel> pos_encoder;
  std::vector<double> pos_loss;
  if (cfg.pos.mode != "none") {
    stage("pos", [&] {
      if (!cfg.pos.checkpoint.empty()) {
        check_vocab_matches(data.vocab, cfg.pos.checkpoint);
        pos_encoder.emplace(base.clone());
        model::load_checkpoint(fs::path(cfg.pos.checkpoint) / "pos_encoder", pos_encoder->parameters(), true);
        return;
      }
      auto tagger = pos::make_pos_tagger(base.clone(), pos::PosTagset::universal(), seed_for(cfg.seed, "pos-head"));
      const auto corpus = pos_corpus(cfg);
      pos_loss = pos::train_pos_tagger(tagger, data.vocab, corpus, pos_train_config(cfg)).epoch_loss;
      pos_encoder.emplace(std::move(tagger.encoder));
    });
  }

  TrainOutcome outcome;
  Json log_lines = Json::array();
  const auto test_raw = pick(data.examples, data.split.test_indices);
  for (const std::size_t f : cfg.folds) {
    stage("train fold " + std::to_string(f), [&] {
      if (f >= data.split.folds.size()) throw ConfigError("fold " + std::to_string(f) + " does not exist");
      const auto& [tr_abs, va_abs] = data.split.folds[f];
      auto m = build_classifier(cfg, data.vocab, data.labels, base, pos_encoder ? &*pos_encoder : nullptr);
      const auto tr = encode_all(*m, pick(data.examples, tr_abs));
      const auto va = encode_all(*m, pick(data.examples, va_abs));
      const auto te = encode_all(*m, test_raw);
      train::TrainConfig tc = cfg.train;
      tc.seed = derive_seed(seed_for(cfg.seed, "train"), f);
      FoldOutcome fo;
      fo.fold = f;
      fo.train = train::train_classifier(*m, tr, va, tc, [&](const train::EpochRecord& r) {
        log_lines.push_back(record_json(f, r));
      });
      fo.validation = train::evaluate(*m, va);
      fo.validation.fold_id = f;
      fo.test = train::evaluate(*m, te);
      fo.test.fold_id = f;
      const bool better = outcome.folds.empty() ||
                          fo.validation.f1_micro > outcome.folds[outcome.best_fold].validation.f1_micro;
      outcome.folds.push_back(std::move(fo));
      if (better) {
        outcome.best_fold = outcome.folds.size() - 1;
        outcome.model = std::move(m);
      }
    });
  }

  const auto& best = outcome.folds[outcome.best_fold];
  std::vector<metrics::MetricsReport> vals, tests;
  Json folds = Json::array();
  for (const auto& fo : outcome.folds) {
    vals.push_back(fo.validation);
    tests.push_back(fo.test);
    folds.push_back({{"fold", fo.fold},
                     {"best_epoch", fo.train.best_epoch},
                     {"best_val_f1_micro", fo.train.best_val_f1_micro},
                     {"test_f1_micro", fo.test.f1_micro},
                     {"test_f1_macro", fo.test.f1_macro}});
  }
  Json& mj = outcome.metrics;
  mj["config_hash"] = hash;
  mj["technique"] = technique_label(cfg);
  mj["dataset"] = std::string(text::to_string(cfg.dataset.tag));
  mj["labels"] = data.labels;
  mj["best_fold"] = best.fold;
  mj["test"] = metrics::to_json(best.test);
  mj["validation"] = metrics::to_json(best.validation);
  mj["folds"] = std::move(folds);
  mj["cross_validation"] = {{"validation", metrics::to_json(metrics::aggregate_folds(vals))},
                            {"test", metrics::to_json(metrics::aggregate_folds(tests))}};
  mj["parameters"] = parameter_report_json(*outcome.model);
  if (!pos_loss.empty()) mj["pos_stage_loss"] = pos_loss;

  if (out) {
    stage("write", [&] {
      fs::create_directories(*out);
      write_file_atomic(*out / "config.json", config.dump(2) + "\n");
      data.vocab.save(*out / "vocab.txt");
      std::string log;
      for (const auto& l : log_lines) log += l.dump() + "\n";
      write_file_atomic(*out / "epoch_log.jsonl", log);
      write_file_atomic(*out / "metrics.json", mj.dump(2) + "\n");
      metrics::ResultTable row({technique_label(cfg)}, {std::string(text::to_string(cfg.dataset.tag))});
      row.set(0, 0, best.test.f1_micro);
      write_file_atomic(*out / "table_row.md", metrics::render_markdown(row));
      const nlohmann::json meta = {{"config_hash", hash},
                                   {"vocab_fingerprint", hex(data.vocab.fingerprint())},
                                   {"technique", technique_label(cfg)},
                                   {"labels", data.labels},
                                   {"fold", best.fold}};
      model::save_checkpoint(*out / "model", checkpoint_parameters(*outcome.model), meta);
      model::save_checkpoint(*out / "adapter", adapter_checkpoint_parameters(*outcome.model), meta);
    });
  }
  return outcome;
}

void check_pretrain_protocol(const RunConfig& cfg) {
  if (cfg.pretrain.sources.empty()) throw ConfigError("pretraining needs at least one source dataset");
  for (const auto& s : cfg.pretrain.sources) {
    if (s.tag == cfg.dataset.tag) {
      throw ConfigError("protocol violation: target dataset " + std::string(text::to_string(cfg.dataset.tag)) +
                        " must not be among the MLM pretraining sources");
    }
  }
}

PretrainOutcome run_pretrain(const Json& materialized, const std::optional<fs::path>& out) {
  const Json config = stage("config", [&] { return resolve(materialized); });
  const RunConfig cfg = parse_run_config(config);
  if (!cfg.encoder_init.empty()) throw ConfigError("pretrain starts from a fresh encoder; clear encoder.init");
  check_pretrain_protocol(cfg);
  const std::string hash = config_hash(config);

  std::vector<text::RawExample> sources;
  stage("data", [&] {
    const auto src_seed = seed_for(cfg.seed, "pretrain-source");
    for (std::size_t i = 0; i < cfg.pretrain.sources.size(); ++i) {
      auto part = load_dataset(cfg.pretrain.sources[i], derive_seed(src_seed, i));
      sources.insert(sources.end(), part.begin(), part.end());
    }
  });
  // Target text only widens the vocabulary; it is never trained on here.
  const auto target = stage("data", [&] { return load_dataset(cfg.dataset, seed_for(cfg.seed, "data")); });
  std::vector<text::RawExample> vocab_corpus = sources;
  vocab_corpus.insert(vocab_corpus.end(), target.begin(), target.end());
  const auto forced = forced_words();
  const auto vocab = text::build_vocab(vocab_corpus, cfg.vocab_min_count, forced);

  std::vector<std::vector<int>> seqs;
  for (const auto& ex : sources) seqs.push_back(text::encode_plain(ex, vocab, 0, cfg.encoder.max_positions).token_ids);
  Rng split_rng(seed_for(cfg.seed, "pretrain-heldout"));
  split_rng.shuffle(std::span(seqs));
  const auto n_held = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.pretrain.heldout_fraction * static_cast<double>(seqs.size()))), 1,
      seqs.size() - 1);
  const std::vector<std::vector<int>> heldout(seqs.begin(), seqs.begin() + static_cast<std::ptrdiff_t>(n_held));
  const std::vector<std::vector<int>> corpus(seqs.begin() + static_cast<std::ptrdiff_t>(n_held), seqs.end());

  model::EncoderModel enc = make_base_encoder(cfg, vocab, false);
  train::MlmConfig mlm = cfg.pretrain.mlm;
  mlm.seed = seed_for(cfg.seed, "mlm");
  PretrainOutcome outcome;
  outcome.mlm = stage("mlm", [&] { return train::mlm_pretrain(enc, corpus, heldout, mlm); });

  Json& mj = outcome.metrics;
  mj["config_hash"] = hash;
  Json src = Json::array();
  for (const auto& s : cfg.pretrain.sources) src.push_back(std::string(text::to_string(s.tag)));
  mj["sources"] = src;
  mj["target"] = std::string(text::to_string(cfg.dataset.tag));
  mj["n_train_sequences"] = corpus.size();
  mj["n_heldout_sequences"] = heldout.size();
  mj["train_loss"] = outcome.mlm.train_loss;
  mj["heldout_loss"] = outcome.mlm.heldout_loss;
  mj["skipped_batches"] = outcome.mlm.skipped_batches;

  if (out) {
    stage("write", [&] {
      fs::create_directories(*out);
      write_file_atomic(*out / "config.json", config.dump(2) + "\n");
      vocab.save(*out / "vocab.txt");
      std::string log;
      for (std::size_t e = 0; e < outcome.mlm.train_loss.size(); ++e) {
        Json line = {{"epoch", e + 1}, {"train_loss", outcome.mlm.train_loss[e]}};
        if (e + 1 < outcome.mlm.heldout_loss.size()) line["heldout_loss"] = outcome.mlm.heldout_loss[e + 1];
        log += line.dump() + "\n";
      }
      write_file_atomic(*out / "mlm_log.jsonl", log);
      write_file_atomic(*out / "metrics.json", mj.dump(2) + "\n");
      model::save_checkpoint(*out / "encoder", enc.parameters(),
                             {{"config_hash", hash},
                              {"vocab_fingerprint", hex(vocab.fingerprint())},
                              {"encoder_config", encoder_config_json(enc.config())}});
    });
  }
  return outcome;
}

Json run_pos_train(const Json& materialized, const std::optional<fs::path>& out) {
  const Json config = stage("config", [&] { return resolve(materialized); });
  const RunConfig cfg = parse_run_config(config);
  const auto data = stage("data", [&] { return prepare_data(cfg); });
  model::EncoderModel base = stage("encoder", [&] { return make_base_encoder(cfg, data.vocab, true); });
  auto tagger = pos::make_pos_tagger(base.clone(), pos::PosTagset::universal(), seed_for(cfg.seed, "pos-head"));
  auto corpus = stage("pos data", [&] { return pos_corpus(cfg); });
  // Last tenth held out for tag accuracy.
  const std::size_t n_held = std::max<std::size_t>(1, corpus.size() / 10);
  if (corpus.size() < 2) throw DataError("POS corpus needs at least two sentences");
  const std::vector<pos::PosExample> held(corpus.end() - static_cast<std::ptrdiff_t>(n_held), corpus.end());
  corpus.resize(corpus.size() - n_held);
  const auto result = stage("pos", [&] { return pos::train_pos_tagger(tagger, data.vocab, corpus, pos_train_config(cfg)); });

  Json mj;
  mj["config_hash"] = config_hash(config);
  mj["epoch_loss"] = result.epoch_loss;
  mj["tag_accuracy_train"] = pos::tag_accuracy(tagger, data.vocab, corpus);
  mj["tag_accuracy_heldout"] = pos::tag_accuracy(tagger, data.vocab, held);
  if (out) {
    stage("write", [&] {
      fs::create_directories(*out);
      write_file_atomic(*out / "config.json", config.dump(2) + "\n");
      data.vocab.save(*out / "vocab.txt");
      write_file_atomic(*out / "metrics.json", mj.dump(2) + "\n");
      const nlohmann::json meta = {{"vocab_fingerprint", hex(data.vocab.fingerprint())},
                                   {"encoder_config", encoder_config_json(tagger.encoder.config())}};
      model::save_checkpoint(*out / "pos_encoder", tagger.encoder.parameters(), meta);
      model::save_checkpoint(*out / "pos_head", tagger.head.parameters(), meta);
    });
  }
  return mj;
}

Json run_eval(const fs::path& run_dir, const std::optional<fs::path>& data_path) {
  const Json config = materialize(read_json_file(run_dir / "config.json"));
  const RunConfig cfg = parse_run_config(config);
  const auto vocab = text::Vocabulary::load(run_dir / "vocab.txt");
  const auto manifest = model::read_manifest(run_dir / "model");
  const auto meta = manifest.value("metadata", nlohmann::json::object());
  if (meta.value("vocab_fingerprint", std::string()) != hex(vocab.fingerprint())) {
    throw DataError("checkpoint " + (run_dir / "model").string() + " was trained with a different vocabulary");
  }

  std::vector<text::RawExample> examples;
  std::vector<std::string> labels;
  if (data_path) {
    examples = text::load_jsonl(*data_path, cfg.dataset.tag);
    if (examples.empty()) throw DataError("evaluation dataset " + data_path->string() + " is empty");
    labels = meta.at("labels").get<std::vector<std::string>>();
  } else {
    const auto all = load_dataset(cfg.dataset, seed_for(cfg.seed, "data"));
    labels = labels_for(cfg.dataset, all);
    const auto split = text::make_split(all.size(), cfg.train_ratio, cfg.k_folds, seed_for(cfg.seed, "split"));
    examples = pick(all, split.test_indices);
  }

  model::EncoderModel base = make_base_encoder(cfg, vocab, false);
  auto m = build_classifier(cfg, vocab, labels, base, nullptr);
  model::load_checkpoint(run_dir / "model", checkpoint_parameters(*m), true);
  const auto encoded = encode_all(*m, examples);
  const auto report = train::evaluate(*m, encoded);
  Json j = metrics::to_json(report);
  j["config_hash"] = config_hash(config);
  return j;
}

GridOutcome run_grid(const Json& grid, const fs::path& out, bool parallel) {
  if (!grid.is_object() || !grid.contains("techniques") || !grid.contains("datasets")) {
    throw ConfigError("grid config needs 'techniques' and 'datasets' lists");
  }
  for (const auto& [key, v] : grid.items()) {
    if (key != "base" && key != "techniques" && key != "datasets") throw ConfigError("unknown grid key '" + key + "'");
  }
  const Json base = grid.value("base", Json::object());
  auto names = [](const Json& list, const char* what) {
    if (!list.is_array() || list.empty()) throw ConfigError(std::string("grid '") + what + "' must be a non-empty list");
    std::vector<std::string> out;
    for (const auto& item : list) out.push_back(item.at("name").get<std::string>());
    return out;
  };
  const auto techniques = names(grid.at("techniques"), "techniques");
  const auto datasets = names(grid.at("datasets"), "datasets");
  const std::uint64_t base_seed = base.value("seed", std::uint64_t{0});

  struct Cell {
    std::size_t t, d;
    std::optional<double> value;
    Json info;
  };
  std::vector<Cell> cells;
  for (std::size_t t = 0; t < techniques.size(); ++t) {
    for (std::size_t d = 0; d < datasets.size(); ++d) cells.push_back({t, d, std::nullopt, Json::object()});
  }

  auto run_cell = [&](Cell& cell) {
    const auto& tname = techniques[cell.t];
    const auto& dname = datasets[cell.d];
    const std::uint64_t seed = derive_seed(base_seed, fnv1a(tname + "/" + dname));
    const fs::path rel = fs::path("cells") / ("t" + std::to_string(cell.t) + "_d" + std::to_string(cell.d));
    const fs::path dir = out / rel;
    cell.info = {{"technique", tname}, {"dataset", dname}, {"seed", seed}, {"run_dir", rel.generic_string()}};
    try {
      Json user = base;
      user.merge_patch(grid.at("datasets")[cell.d].value("config", Json::object()));
      user.merge_patch(grid.at("techniques")[cell.t].value("config", Json::object()));
      user["seed"] = seed;
      const auto outcome = run_train(materialize(user), dir);
      cell.value = outcome.metrics.at("test").at("f1_micro").get<double>();
      cell.info["status"] = "ok";
      cell.info["f1_micro"] = *cell.value;
      cell.info["f1_macro"] = outcome.metrics.at("test").at("f1_macro");
    } catch (const std::exception& e) {
      cell.info["status"] = "error";
      cell.info["message"] = e.what();
      warn("grid cell " + tname + " x " + dname + " failed: " + e.what());
    }
  };

  if (parallel) {
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::size_t next = 0;
    while (next < cells.size()) {
      std::vector<std::future<void>> batch;
      for (std::size_t w = 0; w < workers && next < cells.size(); ++w, ++next) {
        batch.push_back(std::async(std::launch::async, run_cell, std::ref(cells[next])));
      }
      for (auto& f : batch) f.get();
    }
  } else {
    for (auto& c : cells) run_cell(c);
  }

  GridOutcome g{metrics::ResultTable(techniques, datasets), Json::object(), ""};
  Json cell_json = Json::array();
  for (const auto& c : cells) {
    if (c.value) {
      g.table.set(c.t, c.d, *c.value);
    } else {
      g.table.set_error(c.t, c.d);
    }
    cell_json.push_back(c.info);
  }
  g.json["table"] = metrics::to_json(g.table);
  g.json["cells"] = std::move(cell_json);
  g.markdown = metrics::render_markdown(g.table);
  fs::create_directories(out);
  write_file_atomic(out / "grid.json", g.json.dump(2) + "\n");
  write_file_atomic(out / "grid.md", g.markdown);
  return g;
}

}  // namespace peftlab::app
