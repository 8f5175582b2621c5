#pragma once

// Hand-rolled random generators shared by unit and acceptance tests.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hmil/data.hpp"
#include "hmil/extractor.hpp"
#include "hmil/model.hpp"
#include "hmil/schema.hpp"

namespace hmil::testing {

using Rng = std::mt19937_64;

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline bool coin(Rng& rng, double p) { return std::bernoulli_distribution(p)(rng); }

inline std::string random_word(Rng& rng, std::size_t max_len) {
  std::string s(uniform(rng, 0, max_len), 'a');
  for (char& c : s) c = static_cast<char>('a' + uniform(rng, 0, 25));
  return s;
}

/// Arbitrary JSON with a small key and value alphabet so that documents share
/// structure often enough to exercise merging.
inline Json random_json(Rng& rng, int depth = 0) {
  const std::size_t pick = uniform(rng, 0, depth >= 3 ? 4 : 6);
  switch (pick) {
    case 0: return nullptr;
    case 1: return coin(rng, 0.5);
    case 2: return static_cast<std::int64_t>(uniform(rng, 0, 20)) - 10;
    case 3: return static_cast<double>(uniform(rng, 0, 400)) / 16.0 - 5.0;
    case 4: return coin(rng, 0.2) ? std::to_string(uniform(rng, 0, 9)) : random_word(rng, 3);
    case 5: {
      Json list = Json::array();
      for (std::size_t i = uniform(rng, 0, 3); i > 0; --i) list.push_back(random_json(rng, depth + 1));
      return list;
    }
    default: {
      static const char* kKeys[] = {"a", "b", "c", "d"};
      Json dict = Json::object();
      for (const char* k : kKeys) {
        if (coin(rng, 0.5)) dict[k] = random_json(rng, depth + 1);
      }
      return dict;
    }
  }
}

/// Structural template for documents of one random "dataset".
struct Shape {
  enum Kind { kNumber, kCategory, kText, kList, kDict } kind = kNumber;
  std::vector<std::pair<std::string, Shape>> entries;  // kDict
  std::vector<Shape> element;                          // kList: one element shape
};

/// `depth` counts container levels still allowed below this node.
inline Shape random_shape(Rng& rng, int depth, bool root = true) {
  Shape s;
  const std::size_t pick = root ? 4 : uniform(rng, 0, depth > 0 ? 4 : 2);
  if (pick == 4 || (root && depth > 0)) {
    s.kind = Shape::kDict;
    const std::size_t keys = uniform(rng, 1, 3);
    for (std::size_t k = 0; k < keys; ++k) {
      s.entries.emplace_back(std::string(1, static_cast<char>('k' + k)),
                             random_shape(rng, depth - 1, false));
    }
    return s;
  }
  if (pick == 3) {
    s.kind = Shape::kList;
    s.element.push_back(random_shape(rng, depth - 1, false));
    return s;
  }
  s.kind = static_cast<Shape::Kind>(pick);
  return s;
}

inline Json random_instance(Rng& rng, const Shape& shape, double missing) {
  switch (shape.kind) {
    case Shape::kNumber:
      if (coin(rng, missing)) return nullptr;
      return static_cast<double>(uniform(rng, 0, 1000)) / 100.0 - 5.0;
    case Shape::kCategory: {
      static const char* kValues[] = {"tcp", "udp", "icmp", "sctp"};
      if (coin(rng, missing)) return nullptr;
      return kValues[uniform(rng, 0, 3)];
    }
    case Shape::kText:
      if (coin(rng, missing)) return nullptr;
      return random_word(rng, 8);
    case Shape::kList: {
      Json list = Json::array();
      for (std::size_t i = uniform(rng, 0, 5); i > 0; --i) {
        list.push_back(random_instance(rng, shape.element.front(), missing));
      }
      return list;
    }
    case Shape::kDict: {
      Json dict = Json::object();
      for (const auto& [key, child] : shape.entries) {
        if (!coin(rng, missing)) dict[key] = random_instance(rng, child, missing);
      }
      return dict;
    }
  }
  return nullptr;
}

/// Suggestion settings that turn the generated leaf families into numeric,
/// categorical and n-gram extractors respectively, with small dimensions.
inline SuggestConfig small_suggest_config() {
  SuggestConfig c;
  c.category_threshold = 4;
  c.ngram.hash_dim = 17;
  return c;
}

struct RandomCase {
  Shape shape;
  std::vector<Json> documents;
  Extractor extractor;
  DataNode data;
};

/// Random dataset whose first documents are complete, so every leaf kind that
/// appears in the shape is seen by the schema.
inline RandomCase random_case(Rng& rng, std::size_t docs, int depth = 3, double missing = 0.15) {
  RandomCase c{random_shape(rng, depth), {}, {}, make_dense(Matrixf(1, 0))};
  std::vector<Json> corpus;
  for (std::size_t i = 0; i < 40; ++i) corpus.push_back(random_instance(rng, c.shape, 0.0));
  for (std::size_t i = 0; i < docs; ++i) c.documents.push_back(random_instance(rng, c.shape, missing));
  corpus.insert(corpus.end(), c.documents.begin(), c.documents.end());
  c.extractor = suggest_extractor(schema_of(corpus), small_suggest_config());
  c.data = extract_batch(c.extractor, c.documents);
  return c;
}

inline ModelConfig small_model_config(std::uint64_t seed, Aggregation aggregation = Aggregation::kMeanMax) {
  ModelConfig m;
  m.embed_dim = 4;
  m.aggregation = aggregation;
  m.seed = seed;
  return m;
}

template <typename Real>
double max_abs_diff(const Matrix<Real>& a, const Matrix<Real>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return 1e300;
  if (a.size() == 0) return 0.0;
  return static_cast<double>((a - b).cwiseAbs().maxCoeff());
}

/// Shuffles the instance order inside every bag, recursively.
inline DataNode permute_bags(const DataNode& node, Rng& rng) {
  if (const auto* bag = node.get_if<BagNode>()) {
    std::vector<std::size_t> order;
    for (const Segment& s : bag->segments) {
      std::vector<std::size_t> members;
      for (std::size_t i = s.lo; i < s.hi; ++i) members.push_back(i);
      std::shuffle(members.begin(), members.end(), rng);
      order.insert(order.end(), members.begin(), members.end());
    }
    DataNode child = permute_bags(slice(*bag->child, order), rng);
    return make_bag(std::move(child), bag->segments);
  }
  if (const auto* product = node.get_if<ProductNode>()) {
    std::vector<std::pair<std::string, DataNode>> entries;
    for (std::size_t k = 0; k < product->keys.size(); ++k) {
      entries.emplace_back(product->keys[k], permute_bags(product->children[k], rng));
    }
    return make_product(std::move(entries));
  }
  return node;
}

/// Two-class corpus with Bayes accuracy 1: the label is the exclusive or of
/// (a) the presence of key "flag" and (b) whether any element of "items" has
/// kind "marker". Everything else is noise.
inline std::vector<std::pair<Json, std::string>> separable_corpus(Rng& rng, std::size_t n) {
  static const char* kKinds[] = {"alpha", "beta", "gamma", "delta", "omega"};
  std::vector<std::pair<Json, std::string>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool flag = coin(rng, 0.5);
    const bool marker = coin(rng, 0.5);
    Json doc = Json::object();
    doc["id"] = uniform(rng, 0, 100000);
    doc["name"] = random_word(rng, 10);
    Json items = Json::array();
    const std::size_t count = uniform(rng, marker ? 1 : 0, 5);
    const std::size_t marked = marker ? uniform(rng, 0, count - 1) : count;
    for (std::size_t k = 0; k < count; ++k) {
      items.push_back(Json{{"kind", k == marked ? "marker" : kKinds[uniform(rng, 0, 4)]},
                           {"size", static_cast<double>(uniform(rng, 0, 1000)) / 10.0}});
    }
    doc["items"] = std::move(items);
    if (flag) doc["flag"] = random_word(rng, 4);
    out.emplace_back(std::move(doc), flag != marker ? "positive" : "negative");
  }
  return out;
}

}  // namespace hmil::testing
