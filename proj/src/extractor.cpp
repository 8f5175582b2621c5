#include "hmil/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "hmil/error.hpp"
#include "overloaded.hpp"

namespace hmil {

namespace {

using detail::Overloaded;

StringifyExtractor stringify(const SuggestConfig& config) { return {config.ngram}; }

Extractor suggest_leaf(const LeafSchema& leaf, const SuggestConfig& config) {
  std::vector<std::string> vocabulary;
  vocabulary.reserve(leaf.histogram.size());
  const std::uint64_t nulls = leaf.kind_count(ValueKind::kNull);
  for (const auto& [key, count] : leaf.histogram) {
    // Nulls extract as missing; only keep "null" if the string itself occurs.
    if (key == "null" && count <= nulls) continue;
    vocabulary.push_back(key);
  }
  if (!leaf.saturated && vocabulary.size() <= config.category_threshold) {
    return {CategoricalExtractor{std::move(vocabulary)}};
  }

  const std::uint64_t present = leaf.total - nulls;
  const std::uint64_t numeric = leaf.kind_count(ValueKind::kInteger) +
                                leaf.kind_count(ValueKind::kReal) + leaf.numeric_strings;
  if (present > 0 && static_cast<double>(numeric) >=
                         config.numeric_ratio * static_cast<double>(present)) {
    const double stddev = std::sqrt(std::max(0.0, leaf.numeric.variance()));
    return {NumericExtractor{leaf.numeric.mean(), std::max(stddev, 1e-6)}};
  }
  return {config.ngram};
}

Extractor suggest_at(const SchemaNode& schema, const SuggestConfig& config, std::size_t depth) {
  if (depth > config.max_depth) {
    throw Error(ErrorKind::kDepthExceeded, "schema deeper than " +
                                               std::to_string(config.max_depth));
  }
  return std::visit(
      Overloaded{
          [&](const std::monostate&) -> Extractor { return {stringify(config)}; },
          [&](const LeafSchema& leaf) { return suggest_leaf(leaf, config); },
          [&](const ListSchema& list) -> Extractor {
            return {ListExtractor{suggest_at(*list.child, config, depth + 1)}};
          },
          [&](const DictSchema& dict) -> Extractor {
            DictExtractor out;
            for (const auto& [key, entry] : dict.entries) {
              if (static_cast<double>(entry.presence) <
                  config.min_presence * static_cast<double>(dict.total)) {
                continue;
              }
              out.entries.emplace(key, suggest_at(*entry.child, config, depth + 1));
            }
            if (out.entries.empty()) return {stringify(config)};
            return {std::move(out)};
          },
          [&](const PolymorphicSchema& poly) -> Extractor {
            const std::uint64_t total = SchemaNode{poly}.total();
            const SchemaNode* best = nullptr;
            for (const auto* b : {&poly.leaf, &poly.list, &poly.dict}) {
              if (*b && (!best || (**b)->total() > best->total())) best = &***b;
            }
            if (best && static_cast<double>(best->total()) >
                            config.majority_ratio * static_cast<double>(total)) {
              return suggest_at(*best, config, depth + 1);
            }
            return {stringify(config)};
          },
      },
      schema.node);
}

// ---------------------------------------------------------------------------
// Column builders. Each builder mirrors one extractor node and appends one
// column (or one bag) per document.

class Builder {
 public:
  virtual ~Builder() = default;
  virtual void append(const Json& value) = 0;
  virtual void append_missing() = 0;
  virtual DataNode finish() = 0;
};

std::unique_ptr<Builder> make_builder(const Extractor& e, std::size_t depth,
                                      std::size_t max_depth);

class NumericBuilder final : public Builder {
 public:
  explicit NumericBuilder(const NumericExtractor& e) : e_(e) {}

  void append(const Json& value) override {
    std::optional<double> v;
    if (value.is_number()) {
      v = value.get<double>();
    } else if (value.is_string()) {
      v = parse_numeric_string(value.get_ref<const std::string&>());
    }
    if (!v) {
      append_missing();
      return;
    }
    values_.push_back(static_cast<float>((*v - e_.center) / e_.scale));
    missing_.push_back(false);
  }

  void append_missing() override {
    values_.push_back(0.0f);
    missing_.push_back(true);
  }

  DataNode finish() override {
    Matrixf m = Eigen::Map<const Matrixf>(values_.data(), 1,
                                          static_cast<Eigen::Index>(values_.size()));
    return ArrayNode{DenseMatrix{std::move(m)}, std::move(missing_)};
  }

 private:
  const NumericExtractor& e_;
  std::vector<float> values_;
  std::vector<bool> missing_;
};

class CategoricalBuilder final : public Builder {
 public:
  explicit CategoricalBuilder(const CategoricalExtractor& e) : e_(e) {}

  void append(const Json& value) override {
    if (value.is_null() || value.is_structured()) {
      append_missing();
      return;
    }
    const std::string key = leaf_value_key(value);
    auto it = std::lower_bound(e_.vocabulary.begin(), e_.vocabulary.end(), key);
    const bool known = it != e_.vocabulary.end() && *it == key;
    indices_.push_back(known ? static_cast<std::uint32_t>(it - e_.vocabulary.begin())
                             : static_cast<std::uint32_t>(e_.vocabulary.size()));
    missing_.push_back(false);
  }

  void append_missing() override {
    indices_.push_back(OneHotMatrix::kMissing);
    missing_.push_back(true);
  }

  DataNode finish() override {
    return ArrayNode{OneHotMatrix{e_.dim(), std::move(indices_)}, std::move(missing_)};
  }

 private:
  const CategoricalExtractor& e_;
  std::vector<std::uint32_t> indices_;
  std::vector<bool> missing_;
};

class NGramBuilder final : public Builder {
 public:
  NGramBuilder(const NGramExtractor& e, bool stringify) : e_(e), stringify_(stringify) {
    out_.hash_dim = e.hash_dim;
  }

  void append(const Json& value) override {
    if (value.is_null() || (!stringify_ && value.is_structured())) {
      append_missing();
      return;
    }
    if (value.is_string() && !stringify_) {
      add_text(value.get_ref<const std::string&>());
    } else {
      add_text(value.dump(-1, ' ', false, Json::error_handler_t::replace));
    }
    missing_.push_back(false);
  }

  void append_missing() override {
    out_.offsets.push_back(out_.indices.size());
    missing_.push_back(true);
  }

  DataNode finish() override { return ArrayNode{std::move(out_), std::move(missing_)}; }

 private:
  void add_text(std::string_view text) {
    const auto grams = ngram_hash(text, e_.n, e_.base, e_.hash_dim);
    double total = 0.0;
    for (const auto& [index, count] : grams) total += count;
    for (const auto& [index, count] : grams) {
      out_.indices.push_back(index);
      out_.values.push_back(e_.normalize ? static_cast<float>(count / total)
                                         : static_cast<float>(count));
    }
    out_.offsets.push_back(out_.indices.size());
  }

  const NGramExtractor& e_;
  bool stringify_;
  NGramMatrix out_;
  std::vector<bool> missing_;
};

class ListBuilder final : public Builder {
 public:
  ListBuilder(const ListExtractor& e, std::size_t depth, std::size_t max_depth)
      : child_(make_builder(*e.child, depth + 1, max_depth)) {}

  void append(const Json& value) override {
    const std::size_t lo = count_;
    if (value.is_array()) {
      for (const Json& item : value) child_->append(item);
      count_ += value.size();
    } else if (value.is_primitive() && !value.is_null()) {
      // A lone scalar where a list is expected is read as a singleton list.
      child_->append(value);
      ++count_;
    }
    segments_.push_back({lo, count_});
  }

  void append_missing() override { segments_.push_back({count_, count_}); }

  DataNode finish() override {
    return BagNode{std::make_shared<const DataNode>(child_->finish()), std::move(segments_)};
  }

 private:
  std::unique_ptr<Builder> child_;
  std::vector<Segment> segments_;
  std::size_t count_ = 0;
};

class DictBuilder final : public Builder {
 public:
  DictBuilder(const DictExtractor& e, std::size_t depth, std::size_t max_depth) {
    for (const auto& [key, child] : e.entries) {
      keys_.push_back(key);
      children_.push_back(make_builder(*child, depth + 1, max_depth));
    }
  }

  void append(const Json& value) override {
    if (!value.is_object()) {
      append_missing();
      return;
    }
    for (std::size_t k = 0; k < keys_.size(); ++k) {
      auto it = value.find(keys_[k]);
      if (it == value.end()) {
        children_[k]->append_missing();
      } else {
        children_[k]->append(*it);
      }
    }
  }

  void append_missing() override {
    for (auto& c : children_) c->append_missing();
  }

  DataNode finish() override {
    ProductNode out{keys_, {}};
    out.children.reserve(children_.size());
    for (auto& c : children_) out.children.push_back(c->finish());
    return out;
  }

 private:
  std::vector<std::string> keys_;
  std::vector<std::unique_ptr<Builder>> children_;
};

std::unique_ptr<Builder> make_builder(const Extractor& e, std::size_t depth,
                                      std::size_t max_depth) {
  if (depth > max_depth) {
    throw Error(ErrorKind::kDepthExceeded,
                "extractor nesting exceeds max depth " + std::to_string(max_depth));
  }
  return std::visit(
      Overloaded{
          [](const NumericExtractor& x) -> std::unique_ptr<Builder> {
            return std::make_unique<NumericBuilder>(x);
          },
          [](const CategoricalExtractor& x) -> std::unique_ptr<Builder> {
            return std::make_unique<CategoricalBuilder>(x);
          },
          [](const NGramExtractor& x) -> std::unique_ptr<Builder> {
            return std::make_unique<NGramBuilder>(x, false);
          },
          [](const StringifyExtractor& x) -> std::unique_ptr<Builder> {
            return std::make_unique<NGramBuilder>(x.inner, true);
          },
          [&](const ListExtractor& x) -> std::unique_ptr<Builder> {
            return std::make_unique<ListBuilder>(x, depth, max_depth);
          },
          [&](const DictExtractor& x) -> std::unique_ptr<Builder> {
            return std::make_unique<DictBuilder>(x, depth, max_depth);
          },
      },
      e.node);
}

}  // namespace

Extractor suggest_extractor(const SchemaNode& schema, const SuggestConfig& config) {
  if (schema.total() == 0) {
    throw Error(ErrorKind::kEmptySchema, "cannot suggest an extractor from an empty schema");
  }
  return suggest_at(schema, config, 0);
}

DataNode extract(const Extractor& extractor, const Json& doc, std::size_t max_depth) {
  auto builder = make_builder(extractor, 0, max_depth);
  builder->append(doc);
  return builder->finish();
}

DataNode extract_missing(const Extractor& extractor) {
  auto builder = make_builder(extractor, 0, std::numeric_limits<std::size_t>::max());
  builder->append_missing();
  return builder->finish();
}

DataNode extract_batch(const Extractor& extractor, std::span<const Json> docs,
                       std::size_t max_depth) {
  auto builder = make_builder(extractor, 0, max_depth);
  for (const Json& doc : docs) builder->append(doc);
  return builder->finish();
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> ngram_hash(std::string_view bytes,
                                                                std::size_t n,
                                                                std::uint32_t base,
                                                                std::size_t hash_dim) {
  if (n == 0) throw Error(ErrorKind::kInvalidArgument, "n-gram order must be at least 1");
  if (hash_dim < 2) throw Error(ErrorKind::kInvalidArgument, "hash dimension must be >= 2");

  // Unigrams take no padding; a lone boundary symbol carries no information.
  const std::size_t pad = n > 1 ? 1 : 0;
  std::vector<std::uint32_t> symbols;
  symbols.reserve(bytes.size() + 2 * pad);
  if (pad) symbols.push_back(kBoundarySymbol);
  for (char c : bytes) symbols.push_back(static_cast<unsigned char>(c));
  if (pad) symbols.push_back(kBoundarySymbol);

  std::vector<std::uint32_t> indices;
  if (symbols.size() >= n) {
    indices.reserve(symbols.size() - n + 1);
    for (std::size_t start = 0; start + n <= symbols.size(); ++start) {
      std::uint64_t v = 0;
      for (std::size_t k = 0; k < n; ++k) v = (v * base + symbols[start + k]) % hash_dim;
      indices.push_back(static_cast<std::uint32_t>(v));
    }
  }
  std::sort(indices.begin(), indices.end());

  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::uint32_t i : indices) {
    if (!out.empty() && out.back().first == i) {
      ++out.back().second;
    } else {
      out.emplace_back(i, 1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kExtractorFormat = "hmil-extractor/1";

Json ngram_to_json(const NGramExtractor& g) {
  return Json{{"type", "ngram"},
              {"n", g.n},
              {"base", g.base},
              {"hash_dim", g.hash_dim},
              {"normalize", g.normalize}};
}

NGramExtractor ngram_from_json(const Json& j) {
  NGramExtractor g;
  g.n = j.at("n").get<std::size_t>();
  g.base = j.at("base").get<std::uint32_t>();
  g.hash_dim = j.at("hash_dim").get<std::size_t>();
  g.normalize = j.at("normalize").get<bool>();
  if (g.n < 1 || g.hash_dim < 2) throw Error(ErrorKind::kFormat, "invalid n-gram parameters");
  return g;
}

Json node_to_json(const Extractor& e) {
  return std::visit(
      Overloaded{
          [](const NumericExtractor& x) {
            return Json{{"type", "numeric"}, {"center", x.center}, {"scale", x.scale}};
          },
          [](const CategoricalExtractor& x) {
            return Json{{"type", "categorical"}, {"vocabulary", x.vocabulary}};
          },
          [](const NGramExtractor& x) { return ngram_to_json(x); },
          [](const StringifyExtractor& x) {
            return Json{{"type", "stringify"}, {"inner", ngram_to_json(x.inner)}};
          },
          [](const ListExtractor& x) {
            return Json{{"type", "list"}, {"child", node_to_json(*x.child)}};
          },
          [](const DictExtractor& x) {
            Json entries = Json::object();
            for (const auto& [key, child] : x.entries) entries[key] = node_to_json(*child);
            return Json{{"type", "dict"}, {"entries", entries}};
          },
      },
      e.node);
}

Extractor node_from_json(const Json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "numeric") {
    NumericExtractor x{j.at("center").get<double>(), j.at("scale").get<double>()};
    if (!(x.scale > 0.0)) throw Error(ErrorKind::kFormat, "numeric scale must be positive");
    return {x};
  }
  if (type == "categorical") {
    CategoricalExtractor x{j.at("vocabulary").get<std::vector<std::string>>()};
    if (!std::is_sorted(x.vocabulary.begin(), x.vocabulary.end()) ||
        std::adjacent_find(x.vocabulary.begin(), x.vocabulary.end()) != x.vocabulary.end()) {
      throw Error(ErrorKind::kFormat, "categorical vocabulary must be sorted and unique");
    }
    return {std::move(x)};
  }
  if (type == "ngram") return {ngram_from_json(j)};
  if (type == "stringify") return {StringifyExtractor{ngram_from_json(j.at("inner"))}};
  if (type == "list") return {ListExtractor{node_from_json(j.at("child"))}};
  if (type == "dict") {
    DictExtractor x;
    for (const auto& [key, child] : j.at("entries").items()) {
      x.entries.emplace(key, node_from_json(child));
    }
    if (x.entries.empty()) throw Error(ErrorKind::kFormat, "dict extractor has no entries");
    return {std::move(x)};
  }
  throw Error(ErrorKind::kFormat, "unknown extractor type '" + type + "'");
}

}  // namespace

Json extractor_to_json(const Extractor& extractor) {
  return Json{{"format", kExtractorFormat}, {"root", node_to_json(extractor)}};
}

Extractor extractor_from_json(const Json& json) {
  if (!json.is_object() || !json.contains("format") ||
      json.at("format") != Json(kExtractorFormat)) {
    throw Error(ErrorKind::kFormat,
                std::string("expected format '") + kExtractorFormat + "'");
  }
  try {
    return node_from_json(json.at("root"));
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("malformed extractor: ") + e.what());
  }
}

}  // namespace hmil
