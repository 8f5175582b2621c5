#pragma once

// Extractors turn raw JSON documents into DataNodes. They are synthesized from
// a schema by `suggest_extractor` and are immutable afterwards.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "hmil/box.hpp"
#include "hmil/data.hpp"
#include "hmil/schema.hpp"

namespace hmil {

/// Symbol used to pad both ends of a string before taking n-grams.
inline constexpr std::uint32_t kBoundarySymbol = 256;
inline constexpr std::uint32_t kAlphabetBase = 257;

struct NumericExtractor {
  double center = 0.0;
  double scale = 1.0;

  friend bool operator==(const NumericExtractor&, const NumericExtractor&) = default;
};

struct CategoricalExtractor {
  std::vector<std::string> vocabulary;  // sorted, unique

  /// Vocabulary plus the reserved unknown slot.
  std::size_t dim() const { return vocabulary.size() + 1; }
  friend bool operator==(const CategoricalExtractor&, const CategoricalExtractor&) = default;
};

struct NGramExtractor {
  std::size_t n = 3;
  std::uint32_t base = kAlphabetBase;
  std::size_t hash_dim = 2053;
  bool normalize = true;

  friend bool operator==(const NGramExtractor&, const NGramExtractor&) = default;
};

/// Hashes the canonical JSON text of any value.
struct StringifyExtractor {
  NGramExtractor inner;

  friend bool operator==(const StringifyExtractor&, const StringifyExtractor&) = default;
};

struct Extractor;

struct ListExtractor {
  Box<Extractor> child;

  friend bool operator==(const ListExtractor&, const ListExtractor&) = default;
};

struct DictExtractor {
  std::map<std::string, Box<Extractor>> entries;

  friend bool operator==(const DictExtractor&, const DictExtractor&) = default;
};

struct Extractor {
  std::variant<NumericExtractor, CategoricalExtractor, NGramExtractor, StringifyExtractor,
               ListExtractor, DictExtractor>
      node;

  friend bool operator==(const Extractor&, const Extractor&) = default;
};

struct SuggestConfig {
  double min_presence = 0.01;
  std::size_t category_threshold = 100;
  double numeric_ratio = 0.95;
  double majority_ratio = 0.9;
  NGramExtractor ngram;
  std::size_t max_depth = 64;
};

Extractor suggest_extractor(const SchemaNode& schema, const SuggestConfig& config = {});

/// One-sample DataNode. Documents that do not match the extractor produce
/// missing-marked leaves rather than errors.
DataNode extract(const Extractor& extractor, const Json& doc, std::size_t max_depth = 64);
DataNode extract_missing(const Extractor& extractor);
/// Observationally identical to concatenating `extract` of every document.
DataNode extract_batch(const Extractor& extractor, std::span<const Json> docs,
                       std::size_t max_depth = 64);

/// Sorted (index, count) pairs of the hashed n-grams of `bytes`.
std::vector<std::pair<std::uint32_t, std::uint32_t>> ngram_hash(std::string_view bytes,
                                                                std::size_t n,
                                                                std::uint32_t base,
                                                                std::size_t hash_dim);

/// hmil-extractor/1 serialization.
Json extractor_to_json(const Extractor& extractor);
Extractor extractor_from_json(const Json& json);

}  // namespace hmil
