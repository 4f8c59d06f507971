#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace framegen {

/// Closed vocabulary read from "id<TAB>token<TAB>flags" lines, flags being
/// '-' or 'N' (subject noun). Ids must be 0..n-1 in order and the reserved
/// tokens "<pad>" and "<null>" must be present.
class Vocabulary {
 public:
  static Vocabulary parse(std::string_view text);
  static Vocabulary load(const std::filesystem::path& path);
  // The vocabulary shipped in data/vocab.tsv, compiled in.
  static const Vocabulary& builtin();

  std::size_t size() const { return tokens_.size(); }
  std::size_t pad_id() const { return pad_; }
  std::size_t null_id() const { return null_; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  bool is_noun(std::size_t id) const { return nouns_.at(id); }
  const std::vector<bool>& noun_flags() const { return nouns_; }
  std::size_t id(std::string_view token) const;  // VocabularyError when unknown
  bool contains(std::string_view token) const;

  // Whitespace-separated words to ids; unknown words raise a VocabularyError
  // that lists the vocabulary.
  std::vector<std::size_t> tokenize(std::string_view caption) const;
  // Pads with <pad> to `length`; longer captions are a VocabularyError.
  std::vector<std::size_t> pad(std::vector<std::size_t> ids, std::size_t length) const;
  std::vector<std::size_t> encode(std::string_view caption, std::size_t length) const;
  std::vector<std::size_t> null_prompt(std::size_t length) const;
  std::string decode(const std::vector<std::size_t>& ids) const;  // drops <pad>

  std::string listing() const;
  std::string to_tsv() const;

 private:
  std::vector<std::string> tokens_;
  std::vector<bool> nouns_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t pad_ = 0;
  std::size_t null_ = 0;
};

}  // namespace framegen
