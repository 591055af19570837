#include "doctest.h"
#include "peftlab/errors.hpp"
#include "peftlab/fixtures.hpp"

using namespace peftlab;
using namespace peftlab::peft;

namespace {

std::vector<std::string> words_of(const std::string& key) { return fixture_verbalizer(key).words(); }

}  // namespace

TEST_SUITE("fixtures") {
  // Strings copied from the published prompt descriptions, including the
  // doubled spaces in the PHM2017 prompts.
  TEST_CASE("prompt strings are literal") {
    CHECK(fixture_template("rhmd/class-q").display() == ". What is health mention class? [mask].");
    CHECK(fixture_template("illness/mention-q").display() ==
          ". Does this text indicate a health mention of {name of the disease}? [mask].");
    CHECK(fixture_template("illness/diagnosed-q").display() ==
          ". Is a person diagnosed with {name of the disease}? [mask].");
    CHECK(fixture_template("phm/class-q").display() == ". What is health mention class?  [mask].");
    CHECK(fixture_template("phm/type-q").display() ==
          ". What is health mention type for this  {name of the disease} disease? [mask].");
    CHECK(fixture_template_keys().size() == 5);
  }

  TEST_CASE("verbalizer sets are literal") {
    CHECK(words_of("rhmd/abbrev") == std::vector<std::string>{"FM", "NM", "HM"});
    CHECK(words_of("rhmd/words") == std::vector<std::string>{"Figure", "Non", "Health"});
    CHECK(words_of("illness/yesno") == std::vector<std::string>{"Yes", "No"});
    CHECK(words_of("illness/posneg") == std::vector<std::string>{"Positive", "Negative"});
    CHECK(words_of("phm/text-variant") == std::vector<std::string>{"NM", "A", "OM", "SM"});
    CHECK(words_of("phm/table-variant") == std::vector<std::string>{"NH", "A", "OM", "SM"});
    CHECK(fixture_verbalizer_keys().size() == 6);
  }

  TEST_CASE("verbalizers cover their dataset labels in schema order") {
    CHECK(fixture_verbalizer("rhmd/abbrev").labels() == text::label_set(text::DatasetTag::RHMD));
    CHECK(fixture_verbalizer("rhmd/words").labels() == text::label_set(text::DatasetTag::RHMD));
    CHECK(fixture_verbalizer("illness/yesno").labels() == text::label_set(text::DatasetTag::Illness));
    CHECK(fixture_verbalizer("illness/posneg").labels() == text::label_set(text::DatasetTag::Illness));
    CHECK(fixture_verbalizer("phm/text-variant").labels() == text::label_set(text::DatasetTag::PHM2017));
    CHECK(fixture_verbalizer("phm/table-variant").labels() == text::label_set(text::DatasetTag::PHM2017));
  }

  TEST_CASE("defaults and lookups") {
    CHECK(default_fixture_keys(text::DatasetTag::RHMD) == std::pair<std::string, std::string>{"rhmd/class-q", "rhmd/abbrev"});
    CHECK(default_fixture_keys(text::DatasetTag::Synthetic) == default_fixture_keys(text::DatasetTag::RHMD));
    CHECK(default_hard_prompt(text::DatasetTag::Illness).verbalizer == fixture_verbalizer("illness/yesno"));
    CHECK_THROWS_AS(fixture_template("rhmd/nope"), ConfigError);
    CHECK_THROWS_AS(fixture_verbalizer("nope"), ConfigError);
    // Every verbalizer word is a single token once lowercased.
    for (const auto& key : fixture_verbalizer_keys()) {
      for (const auto& w : words_of(key)) CHECK(text::split_words(w).size() == 1);
    }
  }
}
