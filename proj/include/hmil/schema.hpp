#pragma once

// Statistical schema of a JSON corpus: for every position, how often it
// occurs, which JSON kinds appear there, leaf value histograms, list length
// histograms and key presence counts.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>

#include <gmpxx.h>
#include <json.hpp>

#include "hmil/box.hpp"

namespace hmil {

using Json = nlohmann::json;

struct SchemaConfig {
  std::size_t max_distinct = 1000;
  std::size_t max_depth = 64;
};

enum class ValueKind : std::uint8_t { kNull = 0, kBool, kInteger, kReal, kString };
inline constexpr std::size_t kValueKindCount = 5;

/// Running numeric statistics. Sums are kept as exact rationals so merging
/// shards is associative and commutative bit for bit.
struct NumericStats {
  std::uint64_t count = 0;
  mpq_class sum = 0;
  mpq_class sum_squares = 0;
  double min = 0.0;
  double max = 0.0;

  void add(double value);
  void merge(const NumericStats& other);
  double mean() const;
  /// Population variance.
  double variance() const;

  friend bool operator==(const NumericStats& a, const NumericStats& b) {
    return a.count == b.count && a.sum == b.sum && a.sum_squares == b.sum_squares &&
           a.min == b.min && a.max == b.max;
  }
};

struct LeafSchema {
  std::uint64_t total = 0;
  std::array<std::uint64_t, kValueKindCount> kinds{};
  std::map<std::string, std::uint64_t> histogram;
  bool saturated = false;
  /// Strings that parse completely as a number; they also feed `numeric`.
  std::uint64_t numeric_strings = 0;
  NumericStats numeric;

  std::uint64_t kind_count(ValueKind k) const { return kinds[static_cast<std::size_t>(k)]; }

  friend bool operator==(const LeafSchema&, const LeafSchema&) = default;
};

struct SchemaNode;

struct ListSchema {
  std::uint64_t total = 0;
  std::map<std::uint64_t, std::uint64_t> lengths;
  Box<SchemaNode> child;

  friend bool operator==(const ListSchema&, const ListSchema&) = default;
};

struct DictEntry {
  std::uint64_t presence = 0;
  Box<SchemaNode> child;

  friend bool operator==(const DictEntry&, const DictEntry&) = default;
};

struct DictSchema {
  std::uint64_t total = 0;
  std::map<std::string, DictEntry> entries;

  friend bool operator==(const DictSchema&, const DictSchema&) = default;
};

/// A position where documents disagree on leaf vs list vs dict. Each branch
/// holds the statistics of the documents of that shape.
struct PolymorphicSchema {
  std::optional<Box<SchemaNode>> leaf;
  std::optional<Box<SchemaNode>> list;
  std::optional<Box<SchemaNode>> dict;

  friend bool operator==(const PolymorphicSchema&, const PolymorphicSchema&) = default;
};

struct SchemaNode {
  std::variant<std::monostate, LeafSchema, ListSchema, DictSchema, PolymorphicSchema> node;

  bool empty() const { return std::holds_alternative<std::monostate>(node); }
  std::uint64_t total() const;

  friend bool operator==(const SchemaNode&, const SchemaNode&) = default;
};

/// Raw string used as histogram key and categorical vocabulary entry.
std::string leaf_value_key(const Json& value);

/// Parses a string that is entirely a JSON-style number (surrounding
/// whitespace allowed). Returns nullopt otherwise.
std::optional<double> parse_numeric_string(const std::string& text);

void update_schema(SchemaNode& schema, const Json& doc, const SchemaConfig& config = {});
SchemaNode merge_schemas(const SchemaNode& a, const SchemaNode& b,
                         const SchemaConfig& config = {});

/// Folds `update_schema` over documents pulled from `next` until it returns
/// nullopt. Parse failures should be raised by `next` itself.
SchemaNode schema_of(const std::function<std::optional<Json>()>& next,
                     const SchemaConfig& config = {});
SchemaNode schema_of(const std::vector<Json>& corpus, const SchemaConfig& config = {},
                     std::size_t threads = 1);

/// hmil-schema/1 serialization.
Json schema_to_json(const SchemaNode& schema, const SchemaConfig& config = {});
SchemaNode schema_from_json(const Json& json, SchemaConfig* config = nullptr);

/// Self-contained HTML report.
std::string render_report(const SchemaNode& schema, const SchemaConfig& config = {});

}  // namespace hmil
