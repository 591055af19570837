#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "peftlab/adapters.hpp"
#include "peftlab/encoder.hpp"
#include "peftlab/metrics.hpp"
#include "peftlab/pos.hpp"
#include "peftlab/text.hpp"
#include "peftlab/train.hpp"

namespace peftlab::app {

using Json = nlohmann::ordered_json;

// ---- run configuration ---------------------------------------------------

Json default_run_config();

// Deep-merges `user` over the defaults and fills fixture names left empty.
// Unknown keys and ill-typed values are ConfigErrors.
Json materialize(const Json& user);

// "a.b.c=value"; value parsed as JSON when possible, else taken as a string.
void apply_override(Json& cfg, std::string_view assignment);

// fnv1a of the compact dump, as 16 hex digits.
std::string config_hash(const Json& materialized);

struct DatasetConfig {
  std::string source = "synthetic";  // "synthetic" | "file"
  text::DatasetTag tag = text::DatasetTag::RHMD;
  std::string path;
  std::size_t n_per_class = 143;
};

struct PosConfig {
  std::string mode = "none";  // "none" | "intermediate" | "fusion"
  std::size_t epochs = 5;
  std::size_t n_sentences = 600;
  std::string corpus_path;
  std::string checkpoint;  // directory written by pos-train; skips the inline stage
  double lr_max = 1e-3;
  pos::FusionMode fusion_mode = pos::FusionMode::Concat;
  bool train_both = false;
};

struct PretrainConfig {
  std::vector<DatasetConfig> sources;
  train::MlmConfig mlm;
  double heldout_fraction = 0.1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  double train_ratio = 0.7;
  std::size_t k_folds = 5;
  std::vector<std::size_t> folds;
  model::EncoderConfig encoder;  // vocab_size filled from the vocabulary
  std::string encoder_init;      // directory written by pretrain
  int vocab_min_count = 1;
  std::size_t max_length = 64;
  std::string technique = "full_fine_tune";
  peft::SoftPromptSpec soft_prompt;
  peft::PrefixSpec prefix;
  peft::LoraSpec lora;
  std::string template_key;
  std::string verbalizer_key;
  model::FreezePolicy freeze;
  train::TrainConfig train;
  PosConfig pos;
  PretrainConfig pretrain;
};

RunConfig parse_run_config(const Json& materialized);
peft::AdapterSpec adapter_spec(const RunConfig& cfg);

// Reads a config file, applies overrides and materializes it.
Json load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

// ---- pipeline --------------------------------------------------------------

struct PreparedData {
  std::vector<text::RawExample> examples;
  std::vector<std::string> labels;
  text::SplitPlan split;
  text::Vocabulary vocab;
};

std::vector<text::RawExample> load_dataset(const DatasetConfig& cfg, std::uint64_t seed);
std::vector<std::string> labels_for(const DatasetConfig& cfg, const std::vector<text::RawExample>& data);

// Data, split and vocabulary exactly as `train` builds them.
PreparedData prepare_data(const RunConfig& cfg);

struct FoldOutcome {
  std::size_t fold = 0;
  train::TrainResult train;
  metrics::MetricsReport validation;
  metrics::MetricsReport test;
};

struct TrainOutcome {
  Json metrics;  // contents of metrics.json
  std::vector<FoldOutcome> folds;
  std::size_t best_fold = 0;
  std::unique_ptr<model::Classifier> model;  // best fold's model
};

// Runs the full train command in memory; `out` (if set) receives artifacts.
TrainOutcome run_train(const Json& materialized, const std::optional<std::filesystem::path>& out);

// Builds an untrained classifier with the shape `cfg` implies.
std::unique_ptr<model::Classifier> build_classifier(const RunConfig& cfg, const text::Vocabulary& vocab,
                                                    const std::vector<std::string>& labels,
                                                    const model::EncoderModel& base,
                                                    const model::EncoderModel* pos_encoder);

// Every parameter a full checkpoint stores.
model::ParameterList checkpoint_parameters(const model::Classifier& model);
// Adapter-owned and task-head parameters only.
model::ParameterList adapter_checkpoint_parameters(const model::Classifier& model);
Json parameter_report_json(const model::Classifier& model);

struct PretrainOutcome {
  Json metrics;
  train::MlmResult mlm;
};

// Throws ConfigError when a source is the target dataset or no source is given.
void check_pretrain_protocol(const RunConfig& cfg);
PretrainOutcome run_pretrain(const Json& materialized, const std::optional<std::filesystem::path>& out);

Json run_pos_train(const Json& materialized, const std::optional<std::filesystem::path>& out);

// Re-evaluates a train run directory on its own test split or on `data`.
Json run_eval(const std::filesystem::path& run_dir, const std::optional<std::filesystem::path>& data);

struct GridOutcome {
  metrics::ResultTable table;
  Json json;
  std::string markdown;
};

// grid = {"base": {...}, "techniques": [{"name", "config"}], "datasets": [{"name", "config"}]}
GridOutcome run_grid(const Json& grid, const std::filesystem::path& out, bool parallel);

// ---- files -----------------------------------------------------------------

void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
Json read_json_file(const std::filesystem::path& path);

}  // namespace peftlab::app
