#pragma once

#include <string>
#include <utility>
#include <vector>

#include "peftlab/adapters.hpp"
#include "peftlab/text.hpp"

namespace peftlab::peft {

// Named prompts and verbalizers, keyed "<dataset>/<name>" (e.g. "rhmd/abbrev").
PromptTemplate fixture_template(const std::string& key);
Verbalizer fixture_verbalizer(const std::string& key);
std::vector<std::string> fixture_template_keys();
std::vector<std::string> fixture_verbalizer_keys();

// Default (template, verbalizer) keys for a dataset; Synthetic uses RHMD's.
std::pair<std::string, std::string> default_fixture_keys(text::DatasetTag tag);
HardPromptSpec default_hard_prompt(text::DatasetTag tag);

// Every word a fixture can put into an input (for vocabulary building).
std::vector<std::string> fixture_words();

}  // namespace peftlab::peft
