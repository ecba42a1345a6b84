// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "gencil/hash.hpp"
#include "gencil/tokenizer.hpp"

namespace gencil {

inline constexpr std::size_t kTextEmbeddingDim = 256;

struct TextEmbedding {
  std::array<double, kTextEmbeddingDim> v{};
  /// Set for empty input; v is then the zero vector.
  bool empty = false;

  friend bool operator==(const TextEmbedding&, const TextEmbedding&) = default;
};

/// Raw bucket counts of boundary-padded character trigrams. Input is
/// lowercased and whitespace-collapsed first.
inline std::array<double, kTextEmbeddingDim> trigram_counts(std::string_view text) {
  std::array<double, kTextEmbeddingDim> counts{};
  std::string s;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!s.empty() && s.back() != ' ') s.push_back(' ');
    } else {
      s.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  if (s.empty()) return counts;
  const std::string padded = "^" + s + "$";
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i)
    counts[fnv1a64(std::string_view(padded).substr(i, 3)) % kTextEmbeddingDim] += 1.0;
  return counts;
}

inline TextEmbedding normalize_counts(const std::array<double, kTextEmbeddingDim>& counts) {
  TextEmbedding e;
  double ss = 0.0;
  for (double c : counts) ss += c * c;
  if (ss == 0.0) {
    e.empty = true;
    return e;
  }
  const double inv = 1.0 / std::sqrt(ss);
  for (std::size_t i = 0; i < kTextEmbeddingDim; ++i) e.v[i] = counts[i] * inv;
  return e;
}

/// Hashed character-trigram bag (FNV-1a 64, bucket = hash mod 256), L2-normalized.
inline TextEmbedding embed_text(std::string_view text) {
  return normalize_counts(trigram_counts(text));
}

inline double cosine(const TextEmbedding& u, const TextEmbedding& v) {
  if (u.empty || v.empty) throw std::invalid_argument("cosine: empty text embedding");
  double dot = 0.0;
  for (std::size_t i = 0; i < kTextEmbeddingDim; ++i) dot += u.v[i] * v.v[i];
  return dot;
}

/// Swappable text encoder; the trigram bag is the default.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual TextEmbedding embed(std::string_view text) const = 0;
};

class TrigramEncoder final : public TextEncoder {
 public:
  TextEmbedding embed(std::string_view text) const override { return embed_text(text); }
};

using ClassId = std::int32_t;

struct RegisteredClass {
  ClassId id;
  std::string name;
  TextEmbedding embedding;
};

/// Append-only set of seen classes. Embeddings are always recomputed from the
/// names, never loaded.
class ClassRegistry {
 public:
  ClassRegistry() : encoder_(std::make_shared<TrigramEncoder>()) {}
  explicit ClassRegistry(std::shared_ptr<const TextEncoder> enc) : encoder_(std::move(enc)) {}

  void add(ClassId id, const std::string& name) {
    if (ids_.contains(id)) throw std::invalid_argument("registry: duplicate class id " + std::to_string(id));
    if (names_.contains(name)) throw std::invalid_argument("registry: duplicate class name \"" + name + "\"");
    TextEmbedding e = encoder_->embed(name);
    if (e.empty) throw std::invalid_argument("registry: empty class name");
    ids_.insert(id);
    names_.insert(name);
    entries_.push_back({id, name, e});
  }

  bool contains(ClassId id) const { return ids_.contains(id); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<RegisteredClass>& entries() const { return entries_; }
  const TextEncoder& encoder() const { return *encoder_; }

 private:
  std::shared_ptr<const TextEncoder> encoder_;
  std::vector<RegisteredClass> entries_;
  std::unordered_set<ClassId> ids_;
  std::unordered_set<std::string> names_;
};

struct MatchStats {
  std::size_t predictions = 0;
  std::size_t empty_generation = 0;
};

struct Prediction {
  ClassId class_id;
  double similarity;
  bool empty_generation;
};

/// extract_class -> embed -> argmax cosine over the registry. Ties resolve to
/// the lowest class id. Empty generations predict the lowest registered id.
inline Prediction predict_detailed(std::string_view generated, const ClassRegistry& registry) {
  if (registry.empty()) throw std::invalid_argument("predict: empty registry");
  const TextEmbedding q = registry.encoder().embed(extract_class(generated));
  const RegisteredClass* best = nullptr;
  double best_sim = -2.0;
  if (q.empty) {
    for (const auto& c : registry.entries())
      if (best == nullptr || c.id < best->id) best = &c;
    return {best->id, 0.0, true};
  }
  for (const auto& c : registry.entries()) {
    const double s = cosine(q, c.embedding);
    if (best == nullptr || s > best_sim || (s == best_sim && c.id < best->id)) {
      best = &c;
      best_sim = s;
    }
  }
  return {best->id, best_sim, false};
}

inline ClassId predict(std::string_view generated, const ClassRegistry& registry,
                       MatchStats* stats = nullptr) {
  Prediction p = predict_detailed(generated, registry);
  if (stats != nullptr) {
    ++stats->predictions;
    if (p.empty_generation) ++stats->empty_generation;
  }
  return p.class_id;
}

}  // namespace gencil
