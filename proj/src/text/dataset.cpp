#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "peftlab/errors.hpp"
#include "peftlab/rng.hpp"
#include "peftlab/text.hpp"

namespace peftlab::text {

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

std::string_view to_string(DatasetTag tag) {
  switch (tag) {
    case DatasetTag::PHM2017: return "PHM2017";
    case DatasetTag::RHMD: return "RHMD";
    case DatasetTag::Illness: return "Illness";
    case DatasetTag::Synthetic: return "synthetic";
  }
  return "unknown";
}

DatasetTag parse_dataset_tag(std::string_view name) {
  for (auto tag : {DatasetTag::PHM2017, DatasetTag::RHMD, DatasetTag::Illness,
                   DatasetTag::Synthetic}) {
    if (iequals(name, to_string(tag))) return tag;
  }
  if (iequals(name, "PHM")) return DatasetTag::PHM2017;
  throw DataError("unknown dataset tag '" + std::string(name) + "'");
}

const std::vector<std::string>& label_set(DatasetTag tag) {
  static const std::vector<std::string> phm = {"Non-health", "Awareness", "Other-mention",
                                               "Self-mention"};
  static const std::vector<std::string> rhmd = {"Figurative", "Non-Health", "Health"};
  static const std::vector<std::string> illness = {"Positive", "Negative"};
  static const std::vector<std::string> all = [] {
    std::vector<std::string> u;
    for (const auto* s : {&phm, &rhmd, &illness}) u.insert(u.end(), s->begin(), s->end());
    return u;
  }();
  switch (tag) {
    case DatasetTag::PHM2017: return phm;
    case DatasetTag::RHMD: return rhmd;
    case DatasetTag::Illness: return illness;
    case DatasetTag::Synthetic: return all;
  }
  return all;
}

const std::vector<std::string>& disease_list(DatasetTag tag) {
  static const std::vector<std::string> phm = {"Alzheimer", "Cancer",    "Depression",
                                               "Heart attack", "Parkinson", "Stroke"};
  static const std::vector<std::string> illness = {"Alzheimer", "Parkinson", "Cancer", "Diabetes"};
  static const std::vector<std::string> none;
  switch (tag) {
    case DatasetTag::PHM2017: return phm;
    case DatasetTag::Illness: return illness;
    default: return none;
  }
}

std::vector<std::size_t> reference_label_counts(DatasetTag tag) {
  switch (tag) {
    case DatasetTag::PHM2017: return {1145, 2343, 473, 283};
    case DatasetTag::RHMD: return {3225, 3430, 3360};
    case DatasetTag::Illness: return {3940, 18720};
    case DatasetTag::Synthetic: break;
  }
  throw DataError("no reference label distribution for the synthetic tag");
}

int label_index(DatasetTag tag, std::string_view label) {
  const auto& labels = label_set(tag);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (iequals(labels[i], label)) return static_cast<int>(i);
  }
  throw DataError("label '" + std::string(label) + "' is not in the " +
                  std::string(to_string(tag)) + " label set");
}

std::vector<RawExample> load_jsonl(const std::filesystem::path& path,
                                   std::optional<DatasetTag> default_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::vector<RawExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + "malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + "expected a JSON object");
    auto required_string = [&](const char* field) {
      if (!j.contains(field)) throw DataError(where + "missing field '" + field + "'");
      if (!j[field].is_string()) throw DataError(where + "field '" + field + "' must be a string");
      return j[field].get<std::string>();
    };
    RawExample ex;
    ex.text = required_string("text");
    const std::string label = required_string("label");
    if (j.contains("dataset_tag") && !j["dataset_tag"].is_null()) {
      if (!j["dataset_tag"].is_string()) throw DataError(where + "field 'dataset_tag' must be a string");
      try {
        ex.dataset_tag = parse_dataset_tag(j["dataset_tag"].get<std::string>());
      } catch (const DataError& e) {
        throw DataError(where + e.what());
      }
    } else {
      ex.dataset_tag = default_tag.value_or(DatasetTag::Synthetic);
    }
    if (j.contains("disease") && !j["disease"].is_null()) {
      if (!j["disease"].is_string()) throw DataError(where + "field 'disease' must be a string");
      ex.disease = j["disease"].get<std::string>();
    }
    try {
      ex.label = label_set(ex.dataset_tag)[static_cast<std::size_t>(label_index(ex.dataset_tag, label))];
    } catch (const DataError& e) {
      throw DataError(where + "unknown label: " + e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, std::span<const RawExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset " + path.string());
  for (const auto& ex : examples) {
    nlohmann::ordered_json j;
    j["text"] = ex.text;
    j["label"] = ex.label;
    if (ex.disease) j["disease"] = *ex.disease;
    j["dataset_tag"] = std::string(to_string(ex.dataset_tag));
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

SplitPlan make_split(std::size_t n, double train_ratio, std::size_t k, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("train_ratio must lie in (0, 1)");
  if (k < 2) throw ConfigError("cross-validation needs at least 2 folds");
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(n)));
  if (static_cast<double>(n) < static_cast<double>(k) / train_ratio || n_train < k || n_train >= n) {
    throw DataError("dataset of " + std::to_string(n) + " examples is too small for a " +
                    std::to_string(k) + "-fold split at train ratio " + std::to_string(train_ratio));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(perm));

  SplitPlan plan;
  plan.seed = seed;
  plan.train_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  plan.test_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());

  const std::size_t base = n_train / k, extra = n_train % k;
  std::vector<std::vector<std::size_t>> parts;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    parts.emplace_back(plan.train_indices.begin() + static_cast<std::ptrdiff_t>(pos),
                       plan.train_indices.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) train.insert(train.end(), parts[g].begin(), parts[g].end());
    }
    plan.folds.emplace_back(std::move(train), parts[f]);
  }
  return plan;
}

}  // namespace peftlab::text
