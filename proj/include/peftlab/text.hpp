#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace peftlab::text {

enum class DatasetTag { PHM2017, RHMD, Illness, Synthetic };

std::string_view to_string(DatasetTag tag);
// Case-insensitive; throws DataError on unknown names.
DatasetTag parse_dataset_tag(std::string_view name);

// Label inventory per dataset in canonical order. Synthetic accepts the union.
const std::vector<std::string>& label_set(DatasetTag tag);
// Disease names per dataset; empty for RHMD.
const std::vector<std::string>& disease_list(DatasetTag tag);
// Label counts of the original corpora, aligned with label_set().
std::vector<std::size_t> reference_label_counts(DatasetTag tag);

struct RawExample {
  std::string text;
  std::string label;
  std::optional<std::string> disease;
  DatasetTag dataset_tag = DatasetTag::Synthetic;

  bool operator==(const RawExample&) const = default;
};

struct EncodedExample {
  std::vector<int> token_ids;
  std::optional<std::size_t> mask_position;
  int label_id = 0;
  std::size_t attention_length = 0;
};

/// Word-level vocabulary. Ids 0..4 are reserved for [PAD], [MASK], [CLS],
/// [SEP] and [UNK] in that order; regular tokens are stored lowercased.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kUnk = 4;
  static constexpr int kNumReserved = 5;
  static constexpr std::array<std::string_view, 5> kReserved = {"[PAD]", "[MASK]", "[CLS]",
                                                                "[SEP]", "[UNK]"};

  Vocabulary();

  // Returns the id of `token`, inserting it if new.
  int add(std::string_view token);
  std::optional<int> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  // Id of `token`, or kUnk.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line; line index = id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  std::uint64_t fingerprint() const;
  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercased words split on whitespace and punctuation. Reserved bracket
// tokens such as "[MASK]" are kept whole.
std::vector<std::string> split_words(std::string_view text);

Vocabulary build_vocab(std::span<const RawExample> corpus, int min_count,
                       std::span<const std::string> forced = {});
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);

// [CLS] followed by the tokenized text, truncated from the right to max_length.
EncodedExample encode_plain(const RawExample& example, const Vocabulary& vocab, int label_id,
                            std::size_t max_length);

// Index of `label` within label_set(tag); throws DataError if absent.
int label_index(DatasetTag tag, std::string_view label);

std::vector<RawExample> load_jsonl(const std::filesystem::path& path,
                                   std::optional<DatasetTag> default_tag = std::nullopt);
void save_jsonl(const std::filesystem::path& path, std::span<const RawExample> examples);

struct SplitPlan {
  std::uint64_t seed = 0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  // (train, validation) dataset indices; each fold partitions train_indices.
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> folds;

  bool operator==(const SplitPlan&) const = default;
};

SplitPlan make_split(std::size_t n, double train_ratio = 0.7, std::size_t k = 5,
                     std::uint64_t seed = 0);

// Class-balanced template corpus with class-exclusive keywords.
std::vector<RawExample> generate_synthetic(DatasetTag tag, std::size_t n_per_class,
                                           std::uint64_t seed);
// Same generator with labels in the proportions of reference_label_counts().
std::vector<RawExample> generate_synthetic_proportional(DatasetTag tag, std::size_t total,
                                                        std::uint64_t seed);

struct SyntheticClassTable {
  std::string label;
  std::vector<std::string> templates;  // {kw} {disease} {symptom} {thing} {opener}
  std::vector<std::string> keywords;
};
// Construction table of the generator, one entry per label in label_set order.
const std::vector<SyntheticClassTable>& synthetic_table(DatasetTag tag);
// Every word the generator can emit, for any schema, in a fixed order.
std::vector<std::string> generator_words();
// Neutral filler pools shared by every class.
const std::unordered_map<std::string, std::vector<std::string>>& synthetic_fillers();

}  // namespace peftlab::text
