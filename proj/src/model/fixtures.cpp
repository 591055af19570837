#include "peftlab/fixtures.hpp"

#include <map>

#include "peftlab/errors.hpp"

namespace peftlab::peft {

namespace {

using Entries = std::vector<std::pair<std::string, std::string>>;

const std::map<std::string, std::string>& templates() {
  static const std::map<std::string, std::string> t = {
      {"rhmd/class-q", ". What is health mention class? {mask}."},
      {"illness/mention-q", ". Does this text indicate a health mention of {disease}? {mask}."},
      {"illness/diagnosed-q", ". Is a person diagnosed with {disease}? {mask}."},
      // Double spaces are kept as written in the source prompts.
      {"phm/class-q", ". What is health mention class?  {mask}."},
      {"phm/type-q", ". What is health mention type for this  {disease} disease? {mask}."},
  };
  return t;
}

const std::map<std::string, Entries>& verbalizers() {
  static const std::map<std::string, Entries> v = {
      {"rhmd/abbrev", {{"Figurative", "FM"}, {"Non-Health", "NM"}, {"Health", "HM"}}},
      {"rhmd/words", {{"Figurative", "Figure"}, {"Non-Health", "Non"}, {"Health", "Health"}}},
      {"illness/yesno", {{"Positive", "Yes"}, {"Negative", "No"}}},
      {"illness/posneg", {{"Positive", "Positive"}, {"Negative", "Negative"}}},
      {"phm/text-variant",
       {{"Non-health", "NM"}, {"Awareness", "A"}, {"Other-mention", "OM"}, {"Self-mention", "SM"}}},
      {"phm/table-variant",
       {{"Non-health", "NH"}, {"Awareness", "A"}, {"Other-mention", "OM"}, {"Self-mention", "SM"}}},
  };
  return v;
}

template <class Map>
std::vector<std::string> keys_of(const Map& m) {
  std::vector<std::string> out;
  for (const auto& [k, v] : m) out.push_back(k);
  return out;
}

}  // namespace

PromptTemplate fixture_template(const std::string& key) {
  const auto it = templates().find(key);
  if (it == templates().end()) throw ConfigError("no prompt template named '" + key + "'");
  return PromptTemplate(it->second);
}

Verbalizer fixture_verbalizer(const std::string& key) {
  const auto it = verbalizers().find(key);
  if (it == verbalizers().end()) throw ConfigError("no verbalizer named '" + key + "'");
  return Verbalizer(it->second);
}

std::vector<std::string> fixture_template_keys() { return keys_of(templates()); }
std::vector<std::string> fixture_verbalizer_keys() { return keys_of(verbalizers()); }

std::pair<std::string, std::string> default_fixture_keys(text::DatasetTag tag) {
  switch (tag) {
    case text::DatasetTag::PHM2017: return {"phm/type-q", "phm/table-variant"};
    case text::DatasetTag::Illness: return {"illness/mention-q", "illness/yesno"};
    case text::DatasetTag::RHMD:
    case text::DatasetTag::Synthetic:
      break;
  }
  return {"rhmd/class-q", "rhmd/abbrev"};
}

HardPromptSpec default_hard_prompt(text::DatasetTag tag) {
  const auto [t, v] = default_fixture_keys(tag);
  return {fixture_template(t), fixture_verbalizer(v)};
}

std::vector<std::string> fixture_words() {
  std::vector<std::string> words;
  for (const auto& [k, pattern] : templates()) {
    for (auto& w : PromptTemplate(pattern).fixed_words()) words.push_back(std::move(w));
  }
  for (const auto& [k, entries] : verbalizers()) {
    for (const auto& [label, word] : entries) {
      for (auto& w : text::split_words(word)) words.push_back(std::move(w));
    }
  }
  return words;
}

}  // namespace peftlab::peft
