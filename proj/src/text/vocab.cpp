#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "peftlab/errors.hpp"
#include "peftlab/rng.hpp"
#include "peftlab/text.hpp"

namespace peftlab::text {

namespace {

bool is_word_byte(unsigned char c) {
  return c >= 0x80 || std::isalnum(c) != 0;
}

// Matches a reserved token ("[MASK]", case-insensitive) at `pos`.
std::optional<std::string_view> reserved_at(std::string_view text, std::size_t pos) {
  for (auto r : Vocabulary::kReserved) {
    if (pos + r.size() > text.size()) continue;
    bool match = true;
    for (std::size_t i = 0; i < r.size() && match; ++i) {
      match = std::toupper(static_cast<unsigned char>(text[pos + i])) == r[i];
    }
    if (match) return r;
  }
  return std::nullopt;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (auto r : kReserved) add(r);
}

int Vocabulary::add(std::string_view token) {
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), id);
  return id;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  return std::nullopt;
}

int Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                    std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary to " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (n < static_cast<std::size_t>(kNumReserved)) {
      if (line != kReserved[n]) {
        throw DataError(path.string() + ":" + std::to_string(n + 1) + ": expected reserved token " +
                        std::string(kReserved[n]));
      }
    } else {
      if (line.empty()) throw DataError(path.string() + ":" + std::to_string(n + 1) + ": empty token");
      if (v.contains(line)) {
        throw DataError(path.string() + ":" + std::to_string(n + 1) + ": duplicate token '" + line + "'");
      }
      v.add(line);
    }
    ++n;
  }
  if (n < static_cast<std::size_t>(kNumReserved)) {
    throw DataError(path.string() + ": truncated vocabulary");
  }
  return v;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  return fnv1a(joined);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '[') {
      if (auto r = reserved_at(text, i)) {
        flush();
        out.emplace_back(*r);
        i += r->size();
        continue;
      }
    }
    if (std::isspace(c)) {
      flush();
    } else if (is_word_byte(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
    ++i;
  }
  flush();
  return out;
}

Vocabulary build_vocab(std::span<const RawExample> corpus, int min_count,
                       std::span<const std::string> forced) {
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::vector<std::string> order;
  std::map<std::string, int> counts;
  for (const auto& ex : corpus) {
    for (auto& w : split_words(ex.text)) {
      auto [it, inserted] = counts.try_emplace(w, 0);
      if (inserted) order.push_back(w);
      ++it->second;
    }
  }
  Vocabulary vocab;
  for (const auto& w : order) {
    if (counts[w] >= min_count) vocab.add(w);
  }
  for (const auto& f : forced) {
    for (auto& w : split_words(f)) vocab.add(w);
  }
  return vocab;
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

EncodedExample encode_plain(const RawExample& example, const Vocabulary& vocab, int label_id,
                            std::size_t max_length) {
  if (max_length < 1) throw ConfigError("max_length must be at least 1");
  EncodedExample enc;
  enc.token_ids.push_back(Vocabulary::kCls);
  for (int id : tokenize(example.text, vocab)) {
    if (enc.token_ids.size() >= max_length) break;
    enc.token_ids.push_back(id);
  }
  enc.label_id = label_id;
  enc.attention_length = enc.token_ids.size();
  return enc;
}

}  // namespace peftlab::text
