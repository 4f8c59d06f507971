#include "framegen/model/vocab.hpp"

#include <fstream>
#include <sstream>

#include "framegen/errors.hpp"
#include "framegen/util.hpp"

namespace framegen {

extern const char* const kBuiltinVocabularyTsv;

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary v;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3) {
      throw VocabularyError("vocabulary line " + std::to_string(line_no) + ": expected id<TAB>token<TAB>flags");
    }
    std::size_t id = 0;
    try {
      id = std::stoul(fields[0]);
    } catch (const std::exception&) {
      throw VocabularyError("vocabulary line " + std::to_string(line_no) + ": bad id '" + fields[0] + "'");
    }
    if (id != v.tokens_.size()) {
      throw VocabularyError("vocabulary line " + std::to_string(line_no) + ": ids must be consecutive from 0");
    }
    const auto& token = fields[1];
    if (token.empty() || v.index_.contains(token)) {
      throw VocabularyError("vocabulary line " + std::to_string(line_no) + ": empty or duplicate token");
    }
    if (fields[2] != "-" && fields[2] != "N") {
      throw VocabularyError("vocabulary line " + std::to_string(line_no) + ": flags must be '-' or 'N'");
    }
    v.index_.emplace(token, id);
    v.tokens_.push_back(token);
    v.nouns_.push_back(fields[2] == "N");
  }
  if (!v.contains("<pad>") || !v.contains("<null>")) {
    throw VocabularyError("vocabulary must define <pad> and <null>");
  }
  v.pad_ = v.id("<pad>");
  v.null_ = v.id("<null>");
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open vocabulary " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

const Vocabulary& Vocabulary::builtin() {
  static const Vocabulary v = parse(kBuiltinVocabularyTsv);
  return v;
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) {
    throw VocabularyError("unknown word '" + std::string(token) + "'; vocabulary: " + listing());
  }
  return it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

std::vector<std::size_t> Vocabulary::tokenize(std::string_view caption) const {
  std::vector<std::size_t> ids;
  std::istringstream in{std::string(caption)};
  std::string word;
  while (in >> word) ids.push_back(id(word));
  return ids;
}

std::vector<std::size_t> Vocabulary::pad(std::vector<std::size_t> ids, std::size_t length) const {
  if (ids.size() > length) {
    throw VocabularyError("caption of " + std::to_string(ids.size()) + " tokens exceeds text length " +
                          std::to_string(length));
  }
  for (auto i : ids) {
    if (i >= size()) throw VocabularyError("token id " + std::to_string(i) + " outside vocabulary");
  }
  ids.resize(length, pad_);
  return ids;
}

std::vector<std::size_t> Vocabulary::encode(std::string_view caption, std::size_t length) const {
  return pad(tokenize(caption), length);
}

std::vector<std::size_t> Vocabulary::null_prompt(std::size_t length) const {
  return std::vector<std::size_t>(length, null_);
}

std::string Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::string out;
  for (auto i : ids) {
    if (i == pad_) continue;
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

std::string Vocabulary::listing() const {
  std::string out;
  for (const auto& t : tokens_) {
    if (t == "<pad>" || t == "<null>") continue;
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string Vocabulary::to_tsv() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out += std::to_string(i) + '\t' + tokens_[i] + '\t' + (nouns_[i] ? "N" : "-") + '\n';
  }
  return out;
}

}  // namespace framegen
