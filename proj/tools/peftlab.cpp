// peftlab command-line driver.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "peftlab/app.hpp"
#include "peftlab/errors.hpp"
#include "peftlab/kernels.hpp"
#include "peftlab/text.hpp"

namespace fs = std::filesystem;
using namespace peftlab;
using app::Json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kTraining = 3, kPartialGrid = 4 };

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool out_required) {
  cmd->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed (overrides the config)");
  auto* out = cmd->add_option("--out", f.out, "output directory");
  if (out_required) out->required();
  cmd->add_option("--override", f.overrides, "dotted-path override, key=value (repeatable)");
}

Json run_config(const RunFlags& f) {
  Json cfg = f.config.empty() ? app::materialize(Json::object()) : app::load_run_config(f.config, {});
  for (const auto& o : f.overrides) app::apply_override(cfg, o);
  if (f.seed) cfg["seed"] = *f.seed;
  return app::materialize(cfg);
}

std::optional<fs::path> out_dir(const RunFlags& f) {
  if (f.out.empty()) return std::nullopt;
  return fs::path(f.out);
}

void apply_thread_env() {
  const char* env = std::getenv("PEFTLAB_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("PEFTLAB_THREADS must be a positive integer, got '") + env + "'");
  kernels::set_max_threads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"peftlab: prompt and adapter fine-tuning experiments for health mention classification"};
  cli.require_subcommand(1);

  std::string synth_tag = "RHMD", synth_out;
  std::size_t synth_n = 143;
  std::uint64_t synth_seed = 0;
  auto* synth = cli.add_subcommand("synth", "write a synthetic JSONL corpus");
  synth->add_option("--dataset", synth_tag, "PHM2017 | RHMD | Illness | Synthetic");
  synth->add_option("--n-per-class", synth_n, "examples per class");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output .jsonl")->required();

  RunFlags pretrain_f, pos_f, train_f;
  auto* pretrain = cli.add_subcommand("pretrain", "MLM domain adaptation on non-target corpora");
  add_run_flags(pretrain, pretrain_f, true);
  auto* pos_train = cli.add_subcommand("pos-train", "train a POS tagger for later reuse");
  add_run_flags(pos_train, pos_f, true);
  auto* train = cli.add_subcommand("train", "train and evaluate one configuration");
  add_run_flags(train, train_f, true);

  std::string eval_run, eval_data, eval_out;
  auto* eval = cli.add_subcommand("eval", "re-evaluate a train run directory");
  eval->add_option("--run", eval_run, "run directory written by train")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--data", eval_data, "JSONL dataset (default: the run's own test split)");
  eval->add_option("--out", eval_out, "write the report to this file");

  std::string grid_config, grid_out;
  bool grid_parallel = false;
  auto* grid = cli.add_subcommand("grid", "technique x dataset experiment grid");
  grid->add_option("--config", grid_config, "grid JSON")->required()->check(CLI::ExistingFile);
  grid->add_option("--out", grid_out, "output directory")->required();
  grid->add_flag("--parallel", grid_parallel, "run cells concurrently");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    apply_thread_env();
    if (*synth) {
      text::DatasetTag tag;
      try {
        tag = text::parse_dataset_tag(synth_tag);
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
      const auto data = text::generate_synthetic(tag, synth_n, synth_seed);
      if (fs::path(synth_out).has_parent_path()) fs::create_directories(fs::path(synth_out).parent_path());
      text::save_jsonl(synth_out, data);
      std::cout << "wrote " << data.size() << " examples to " << synth_out << "\n";
    } else if (*pretrain) {
      const auto r = app::run_pretrain(run_config(pretrain_f), out_dir(pretrain_f));
      std::cout << "held-out MLM loss " << r.mlm.heldout_loss.front() << " -> " << r.mlm.heldout_loss.back() << "\n";
    } else if (*pos_train) {
      const auto m = app::run_pos_train(run_config(pos_f), out_dir(pos_f));
      std::cout << "POS tag accuracy (held-out) " << m.at("tag_accuracy_heldout").get<double>() << "\n";
    } else if (*train) {
      const auto r = app::run_train(run_config(train_f), out_dir(train_f));
      std::cout << r.metrics.at("technique").get<std::string>() << " on " << r.metrics.at("dataset").get<std::string>()
                << ": test f1_micro " << r.metrics.at("test").at("f1_micro").get<double>() << ", f1_macro "
                << r.metrics.at("test").at("f1_macro").get<double>() << "\n";
    } else if (*eval) {
      const auto report = app::run_eval(eval_run, eval_data.empty() ? std::nullopt
                                                                     : std::optional<fs::path>(eval_data));
      if (!eval_out.empty()) {
        app::write_file_atomic(eval_out, report.dump(2) + "\n");
      }
      std::cout << report.dump(2) << "\n";
    } else if (*grid) {
      const auto g = app::run_grid(app::read_json_file(grid_config), grid_out, grid_parallel);
      std::cout << g.markdown;
      if (g.table.error_count() > 0) return kPartialGrid;
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kTraining;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTraining;
  }
}
