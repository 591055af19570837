#include <algorithm>
#include <cmath>
#include <numeric>

#include "peftlab/errors.hpp"
#include "peftlab/rng.hpp"
#include "peftlab/text.hpp"

namespace peftlab::text {

namespace {

std::string fill(std::string_view pattern,
                 const std::unordered_map<std::string, std::string>& values) {
  std::string out;
  for (std::size_t i = 0; i < pattern.size();) {
    if (pattern[i] == '{') {
      const auto close = pattern.find('}', i);
      const std::string key(pattern.substr(i + 1, close - i - 1));
      out += values.at(key);
      i = close + 1;
    } else {
      out += pattern[i++];
    }
  }
  return out;
}

template <typename T>
const T& pick(const std::vector<T>& xs, Rng& rng) {
  return xs[rng.below(xs.size())];
}

RawExample make_example(DatasetTag tag, std::size_t cls, Rng& rng) {
  const auto& entry = synthetic_table(tag)[cls];
  const auto& fillers = synthetic_fillers();
  std::unordered_map<std::string, std::string> values;
  values["kw"] = pick(entry.keywords, rng);
  values["opener"] = pick(fillers.at("opener"), rng);
  values["thing"] = pick(fillers.at("thing"), rng);
  values["symptom"] = pick(fillers.at("symptom"), rng);
  RawExample ex;
  ex.dataset_tag = tag;
  ex.label = entry.label;
  const auto& diseases = disease_list(tag);
  if (!diseases.empty()) {
    ex.disease = pick(diseases, rng);
    values["disease"] = *ex.disease;
  }
  ex.text = fill(pick(entry.templates, rng), values);
  return ex;
}

void check_tag(DatasetTag tag) {
  if (tag == DatasetTag::Synthetic) {
    throw DataError("synthetic generation needs a dataset schema (PHM2017, RHMD or Illness)");
  }
}

}  // namespace

const std::unordered_map<std::string, std::vector<std::string>>& synthetic_fillers() {
  static const std::unordered_map<std::string, std::vector<std::string>> pools = {
      {"opener", {"honestly", "today", "so", "well", "yesterday", "ugh", "okay"}},
      {"thing", {"exam", "meeting", "traffic", "weather", "game", "movie", "boss", "homework"}},
      {"symptom", {"headache", "migraine", "fever", "cough", "seizure", "rash", "insomnia"}},
  };
  return pools;
}

const std::vector<SyntheticClassTable>& synthetic_table(DatasetTag tag) {
  static const std::vector<SyntheticClassTable> rhmd = {
      {"Figurative",
       {"{opener} this {thing} is giving me a {symptom} {kw}",
        "{kw} my {thing} gave me a {symptom}",
        "{opener} that {thing} was a total {symptom} {kw}"},
       {"lol", "literally", "haha", "lmao", "figuratively"}},
      {"Non-Health",
       {"{opener} i read an {kw} about {symptom} in general",
        "the {kw} says {symptom} is common in winter",
        "{opener} a new {kw} on {symptom} came out"},
       {"article", "study", "report", "documentary", "survey"}},
      {"Health",
       {"{opener} i went to the {kw} because of my {symptom}",
        "my {symptom} got worse so i saw a {kw}",
        "{opener} the {kw} checked my {symptom} today"},
       {"doctor", "clinic", "hospital", "nurse", "physician"}},
  };
  static const std::vector<SyntheticClassTable> phm = {
      {"Non-health",
       {"{opener} this {thing} is giving me {disease} {kw}",
        "{kw} my {thing} is basically {disease}"},
       {"lol", "joke", "haha", "lmao"}},
      {"Awareness",
       {"please {kw} for {disease} this month",
        "{opener} we {kw} to fight {disease} together"},
       {"donate", "campaign", "fundraise", "volunteer"}},
      {"Other-mention",
       {"{opener} my {kw} was told she has {disease}",
        "my {kw} is fighting {disease} right now"},
       {"grandma", "uncle", "neighbor", "sister"}},
      {"Self-mention",
       {"{opener} i started {kw} for my {disease}",
        "i am on {kw} because of my {disease}"},
       {"chemo", "medication", "therapy", "treatment"}},
  };
  static const std::vector<SyntheticClassTable> illness = {
      {"Positive",
       {"{opener} i was {kw} with {disease} last week",
        "i just got {kw} with {disease} {opener}"},
       {"diagnosed", "tested", "confirmed", "treated"}},
      {"Negative",
       {"{opener} i watched a {kw} about {disease}",
        "there is a {kw} on {disease} {opener}"},
       {"fundraiser", "podcast", "lecture", "film"}},
  };
  switch (tag) {
    case DatasetTag::PHM2017: return phm;
    case DatasetTag::RHMD: return rhmd;
    case DatasetTag::Illness: return illness;
    case DatasetTag::Synthetic: break;
  }
  check_tag(tag);
  return rhmd;
}

std::vector<std::string> generator_words() {
  std::vector<std::string> out;
  auto add = [&](std::string_view text) {
    for (auto& w : split_words(text)) out.push_back(std::move(w));
  };
  for (auto tag : {DatasetTag::PHM2017, DatasetTag::RHMD, DatasetTag::Illness}) {
    for (const auto& entry : synthetic_table(tag)) {
      for (const auto& t : entry.templates) {
        std::string literal;
        for (std::size_t i = 0; i < t.size(); ++i) {
          if (t[i] == '{') {
            i = t.find('}', i);
            literal += ' ';
          } else {
            literal += t[i];
          }
        }
        add(literal);
      }
      for (const auto& k : entry.keywords) add(k);
    }
    for (const auto& d : disease_list(tag)) add(d);
  }
  // Map iteration order is unspecified; walk the pools by name.
  for (const char* pool : {"opener", "thing", "symptom"}) {
    for (const auto& w : synthetic_fillers().at(pool)) add(w);
  }
  return out;
}

std::vector<RawExample> generate_synthetic(DatasetTag tag, std::size_t n_per_class,
                                           std::uint64_t seed) {
  check_tag(tag);
  if (n_per_class < 1) throw DataError("n_per_class must be at least 1");
  Rng rng(seed);
  std::vector<RawExample> out;
  const std::size_t n_classes = synthetic_table(tag).size();
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) out.push_back(make_example(tag, c, rng));
  }
  rng.shuffle(std::span(out));
  return out;
}

std::vector<RawExample> generate_synthetic_proportional(DatasetTag tag, std::size_t total,
                                                        std::uint64_t seed) {
  check_tag(tag);
  const auto counts = reference_label_counts(tag);
  const double sum = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (total < counts.size()) throw DataError("need at least one example per class");
  // Largest-remainder apportionment; every class gets at least one example.
  std::vector<std::size_t> alloc(counts.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double exact = static_cast<double>(total) * static_cast<double>(counts[c]) / sum;
    alloc[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(exact)));
    assigned += alloc[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % remainders.size()) {
    ++alloc[remainders[i].second];
    ++assigned;
  }
  while (assigned > total) {
    auto it = std::max_element(alloc.begin(), alloc.end());
    --*it;
    --assigned;
  }
  Rng rng(seed);
  std::vector<RawExample> out;
  for (std::size_t c = 0; c < alloc.size(); ++c) {
    for (std::size_t i = 0; i < alloc[c]; ++i) out.push_back(make_example(tag, c, rng));
  }
  rng.shuffle(std::span(out));
  return out;
}

}  // namespace peftlab::text
