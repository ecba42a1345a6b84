// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gencil {

inline constexpr std::string_view kTemplatePrefix = "this is a photo of";
inline constexpr std::string_view kDefaultQuestion = "what is this";

class OutOfVocabulary : public std::runtime_error {
 public:
  explicit OutOfVocabulary(std::string word)
      : std::runtime_error("out-of-vocabulary word: \"" + word + "\""), word_(std::move(word)) {}
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

/// Lowercases, replaces punctuation with spaces and collapses whitespace.
inline std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream is{std::string(text)};
  for (std::string w; is >> w;) words.push_back(std::move(w));
  return words;
}

using TokenId = std::int32_t;

struct Span {
  std::size_t start = 0;
  std::size_t length = 0;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::optional<Span> answer;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Closed word-level vocabulary. Ids 0..3 are the specials in fixed order,
/// the remaining ids follow sorted word order.
class Vocab {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kImg = 3;
  static constexpr std::size_t kSpecialCount = 4;

  static const std::vector<std::string>& special_names() {
    static const std::vector<std::string> names{"<bos>", "<eos>", "<pad>", "<img>"};
    return names;
  }

  Vocab() : Vocab(std::vector<std::string>{}) {}

  /// Builds from an arbitrary word list; normalizes, dedups and sorts.
  explicit Vocab(const std::vector<std::string>& words) {
    std::set<std::string> sorted;
    for (const auto& w : words)
      for (auto& piece : split_words(normalize_text(w))) sorted.insert(std::move(piece));
    words_ = special_names();
    words_.insert(words_.end(), sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < words_.size(); ++i)
      index_.emplace(words_[i], static_cast<TokenId>(i));
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::string& word(TokenId id) const { return words_.at(static_cast<std::size_t>(id)); }
  bool is_special(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < kSpecialCount; }

  std::optional<TokenId> find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view word) const { return find(word).has_value(); }

  TokenSequence encode(std::string_view text) const {
    TokenSequence seq;
    for (const auto& w : split_words(normalize_text(text))) {
      auto id = find(w);
      if (!id || is_special(*id)) throw OutOfVocabulary(w);
      seq.ids.push_back(*id);
    }
    return seq;
  }

  /// Specials are never emitted.
  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
        throw std::out_of_range("decode: token id " + std::to_string(id) + " outside vocabulary");
      if (is_special(id)) continue;
      if (!out.empty()) out.push_back(' ');
      out += words_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  /// One word per line, specials first; line number is the id.
  std::string serialize() const {
    std::string out;
    for (const auto& w : words_) out += w + '\n';
    return out;
  }

  static Vocab parse(std::string_view text) {
    std::vector<std::string> lines;
    std::istringstream is{std::string(text)};
    for (std::string line; std::getline(is, line);)
      if (!line.empty()) lines.push_back(line);
    const auto& sp = special_names();
    if (lines.size() < kSpecialCount || !std::equal(sp.begin(), sp.end(), lines.begin()))
      throw std::runtime_error("vocab file: specials missing or out of order");
    std::vector<std::string> rest(lines.begin() + kSpecialCount, lines.end());
    Vocab v(rest);
    if (v.words_ != lines) throw std::runtime_error("vocab file: words not sorted or not unique");
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write vocab file: " + path);
    os << serialize();
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Vocabulary over class names, template words, question words and extras.
/// Class names must be unique after normalization.
inline Vocab build_vocab(const std::vector<std::string>& class_names,
                         const std::vector<std::string>& extra_words = {},
                         std::string_view question = kDefaultQuestion) {
  if (class_names.empty()) throw std::invalid_argument("build_vocab: no class names");
  std::set<std::string> seen;
  for (const auto& c : class_names) {
    auto n = normalize_text(c);
    if (n.empty()) throw std::invalid_argument("build_vocab: empty class name");
    if (!seen.insert(n).second)
      throw std::invalid_argument("build_vocab: duplicate class name after normalization: \"" + n +
                                  "\"");
  }
  std::vector<std::string> words(class_names);
  words.emplace_back(kTemplatePrefix);
  words.emplace_back(question);
  words.insert(words.end(), extra_words.begin(), extra_words.end());
  return Vocab(words);
}

inline std::string render_template(std::string_view class_name) {
  return std::string(kTemplatePrefix) + " " + std::string(class_name);
}

/// Returns the text after the template prefix, or the whole text when the
/// prefix does not match. Result is trimmed.
inline std::string extract_class(std::string_view generated) {
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
  };
  std::string t = trim(generated);
  if (t.starts_with(kTemplatePrefix) &&
      (t.size() == kTemplatePrefix.size() || std::isspace(static_cast<unsigned char>(t[kTemplatePrefix.size()]))))
    return trim(std::string_view(t).substr(kTemplatePrefix.size()));
  return t;
}

}  // namespace gencil
