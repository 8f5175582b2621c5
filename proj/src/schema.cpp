#include "hmil/schema.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <thread>
#include <vector>

#include "hmil/error.hpp"
#include "overloaded.hpp"

namespace hmil {

namespace {

using detail::Overloaded;

enum class Shape { kLeaf, kList, kDict };

Shape shape_of(const Json& doc) {
  if (doc.is_array()) return Shape::kList;
  if (doc.is_object()) return Shape::kDict;
  return Shape::kLeaf;
}

ValueKind kind_of(const Json& v) {
  switch (v.type()) {
    case Json::value_t::null: return ValueKind::kNull;
    case Json::value_t::boolean: return ValueKind::kBool;
    case Json::value_t::number_integer:
    case Json::value_t::number_unsigned: return ValueKind::kInteger;
    case Json::value_t::number_float: return ValueKind::kReal;
    default: return ValueKind::kString;
  }
}

SchemaNode empty_of(Shape shape) {
  switch (shape) {
    case Shape::kLeaf: return SchemaNode{LeafSchema{}};
    case Shape::kList: return SchemaNode{ListSchema{}};
    case Shape::kDict: return SchemaNode{DictSchema{}};
  }
  return {};
}

std::optional<Box<SchemaNode>>& branch(PolymorphicSchema& p, Shape shape) {
  switch (shape) {
    case Shape::kLeaf: return p.leaf;
    case Shape::kList: return p.list;
    case Shape::kDict: return p.dict;
  }
  return p.leaf;
}

const std::optional<Box<SchemaNode>>& branch(const PolymorphicSchema& p, Shape shape) {
  return branch(const_cast<PolymorphicSchema&>(p), shape);
}

std::optional<Shape> shape_of(const SchemaNode& s) {
  if (std::holds_alternative<LeafSchema>(s.node)) return Shape::kLeaf;
  if (std::holds_alternative<ListSchema>(s.node)) return Shape::kList;
  if (std::holds_alternative<DictSchema>(s.node)) return Shape::kDict;
  return std::nullopt;
}

void add_to_histogram(LeafSchema& leaf, const std::string& key, const SchemaConfig& config) {
  auto it = leaf.histogram.find(key);
  if (it != leaf.histogram.end()) {
    ++it->second;
  } else if (leaf.histogram.size() < config.max_distinct) {
    leaf.histogram.emplace(key, 1);
  } else {
    leaf.saturated = true;
  }
}

void update_leaf(LeafSchema& leaf, const Json& v, const SchemaConfig& config) {
  ++leaf.total;
  const ValueKind kind = kind_of(v);
  ++leaf.kinds[static_cast<std::size_t>(kind)];
  add_to_histogram(leaf, leaf_value_key(v), config);
  if (kind == ValueKind::kInteger || kind == ValueKind::kReal) {
    leaf.numeric.add(v.get<double>());
  } else if (kind == ValueKind::kString) {
    if (auto parsed = parse_numeric_string(v.get_ref<const std::string&>())) {
      ++leaf.numeric_strings;
      leaf.numeric.add(*parsed);
    }
  }
}

void update_at(SchemaNode& s, const Json& doc, const SchemaConfig& config,
               std::size_t depth);

void update_matching(SchemaNode& s, const Json& doc, const SchemaConfig& config,
                     std::size_t depth) {
  std::visit(Overloaded{
                 [&](LeafSchema& leaf) { update_leaf(leaf, doc, config); },
                 [&](ListSchema& list) {
                   ++list.total;
                   ++list.lengths[doc.size()];
                   for (const Json& item : doc) update_at(*list.child, item, config, depth + 1);
                 },
                 [&](DictSchema& dict) {
                   ++dict.total;
                   for (const auto& [key, value] : doc.items()) {
                     DictEntry& entry = dict.entries[key];
                     ++entry.presence;
                     update_at(*entry.child, value, config, depth + 1);
                   }
                 },
                 [](auto&) {},
             },
             s.node);
}

void update_at(SchemaNode& s, const Json& doc, const SchemaConfig& config,
               std::size_t depth) {
  if (depth > config.max_depth) {
    throw Error(ErrorKind::kDepthExceeded,
                "nesting exceeds max depth " + std::to_string(config.max_depth));
  }
  const Shape shape = shape_of(doc);
  if (s.empty()) s = empty_of(shape);

  if (auto* poly = std::get_if<PolymorphicSchema>(&s.node)) {
    auto& b = branch(*poly, shape);
    if (!b) b = Box<SchemaNode>(empty_of(shape));
    update_matching(**b, doc, config, depth);
    return;
  }
  const Shape current = *shape_of(s);
  if (current == shape) {
    update_matching(s, doc, config, depth);
    return;
  }
  PolymorphicSchema poly;
  branch(poly, current) = Box<SchemaNode>(std::move(s));
  auto& b = branch(poly, shape);
  b = Box<SchemaNode>(empty_of(shape));
  update_matching(**b, doc, config, depth);
  s = SchemaNode{std::move(poly)};
}

void cap_histogram(LeafSchema& leaf, const SchemaConfig& config) {
  if (leaf.histogram.size() <= config.max_distinct) return;
  std::vector<std::pair<std::string, std::uint64_t>> items(leaf.histogram.begin(),
                                                           leaf.histogram.end());
  // Stable sort on an already key-sorted range: equal counts stay lexicographic.
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  items.resize(config.max_distinct);
  leaf.histogram = {items.begin(), items.end()};
  leaf.saturated = true;
}

LeafSchema merge_leaf(const LeafSchema& a, const LeafSchema& b, const SchemaConfig& config) {
  LeafSchema out = a;
  out.total += b.total;
  for (std::size_t k = 0; k < kValueKindCount; ++k) out.kinds[k] += b.kinds[k];
  for (const auto& [key, count] : b.histogram) out.histogram[key] += count;
  out.saturated = a.saturated || b.saturated;
  out.numeric_strings += b.numeric_strings;
  out.numeric.merge(b.numeric);
  cap_histogram(out, config);
  return out;
}

PolymorphicSchema as_polymorphic(const SchemaNode& s) {
  if (const auto* p = std::get_if<PolymorphicSchema>(&s.node)) return *p;
  PolymorphicSchema out;
  if (auto shape = shape_of(s)) branch(out, *shape) = Box<SchemaNode>(s);
  return out;
}

}  // namespace

void NumericStats::add(double value) {
  if (count == 0) {
    min = max = value;
  } else {
    min = std::min(min, value);
    max = std::max(max, value);
  }
  ++count;
  const mpq_class q(value);
  sum += q;
  sum_squares += q * q;
}

void NumericStats::merge(const NumericStats& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  min = std::min(min, other.min);
  max = std::max(max, other.max);
  count += other.count;
  sum += other.sum;
  sum_squares += other.sum_squares;
}

double NumericStats::mean() const {
  if (count == 0) return 0.0;
  const mpq_class m = sum / mpq_class(count);
  return m.get_d();
}

double NumericStats::variance() const {
  if (count == 0) return 0.0;
  const mpq_class n(count);
  const mpq_class v = (sum_squares - sum * sum / n) / n;
  return v.get_d();
}

std::uint64_t SchemaNode::total() const {
  return std::visit(Overloaded{
                        [](const std::monostate&) -> std::uint64_t { return 0; },
                        [](const LeafSchema& l) { return l.total; },
                        [](const ListSchema& l) { return l.total; },
                        [](const DictSchema& d) { return d.total; },
                        [](const PolymorphicSchema& p) {
                          std::uint64_t t = 0;
                          for (const auto* b : {&p.leaf, &p.list, &p.dict}) {
                            if (*b) t += (**b)->total();
                          }
                          return t;
                        },
                    },
                    node);
}

std::string leaf_value_key(const Json& value) {
  if (value.is_string()) return value.get<std::string>();
  return value.dump();
}

std::optional<double> parse_numeric_string(const std::string& text) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && std::isspace(static_cast<unsigned char>(*first))) ++first;
  while (last > first && std::isspace(static_cast<unsigned char>(*(last - 1)))) --last;
  if (first == last) return std::nullopt;
  // Allow a leading '+', which from_chars rejects.
  if (*first == '+') ++first;
  if (first == last || !(std::isdigit(static_cast<unsigned char>(*first)) || *first == '-' ||
                         *first == '.')) {
    return std::nullopt;
  }
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) return std::nullopt;
  return value;
}

void update_schema(SchemaNode& schema, const Json& doc, const SchemaConfig& config) {
  update_at(schema, doc, config, 0);
}

SchemaNode merge_schemas(const SchemaNode& a, const SchemaNode& b, const SchemaConfig& config) {
  if (a.empty()) return b;
  if (b.empty()) return a;

  const auto sa = shape_of(a);
  const auto sb = shape_of(b);
  if (sa && sb && *sa == *sb) {
    if (const auto* la = std::get_if<LeafSchema>(&a.node)) {
      return SchemaNode{merge_leaf(*la, std::get<LeafSchema>(b.node), config)};
    }
    if (const auto* la = std::get_if<ListSchema>(&a.node)) {
      const auto& lb = std::get<ListSchema>(b.node);
      ListSchema out;
      out.total = la->total + lb.total;
      out.lengths = la->lengths;
      for (const auto& [len, count] : lb.lengths) out.lengths[len] += count;
      out.child = merge_schemas(*la->child, *lb.child, config);
      return SchemaNode{std::move(out)};
    }
    const auto& da = std::get<DictSchema>(a.node);
    const auto& db = std::get<DictSchema>(b.node);
    DictSchema out;
    out.total = da.total + db.total;
    out.entries = da.entries;
    for (const auto& [key, entry] : db.entries) {
      auto it = out.entries.find(key);
      if (it == out.entries.end()) {
        out.entries.emplace(key, entry);
      } else {
        it->second.presence += entry.presence;
        it->second.child = merge_schemas(*it->second.child, *entry.child, config);
      }
    }
    return SchemaNode{std::move(out)};
  }

  const PolymorphicSchema pa = as_polymorphic(a);
  const PolymorphicSchema pb = as_polymorphic(b);
  PolymorphicSchema out;
  for (Shape shape : {Shape::kLeaf, Shape::kList, Shape::kDict}) {
    const auto& x = branch(pa, shape);
    const auto& y = branch(pb, shape);
    if (x && y) {
      branch(out, shape) = Box<SchemaNode>(merge_schemas(**x, **y, config));
    } else if (x) {
      branch(out, shape) = *x;
    } else if (y) {
      branch(out, shape) = *y;
    }
  }
  return SchemaNode{std::move(out)};
}

SchemaNode schema_of(const std::function<std::optional<Json>()>& next,
                     const SchemaConfig& config) {
  SchemaNode schema;
  while (auto doc = next()) update_schema(schema, *doc, config);
  return schema;
}

SchemaNode schema_of(const std::vector<Json>& corpus, const SchemaConfig& config,
                     std::size_t threads) {
  threads = std::max<std::size_t>(1, std::min(threads, corpus.size()));
  if (threads == 1) {
    SchemaNode schema;
    for (const Json& doc : corpus) update_schema(schema, doc, config);
    return schema;
  }
  std::vector<SchemaNode> shards(threads);
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> workers;
  const std::size_t chunk = (corpus.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      try {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(corpus.size(), lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) update_schema(shards[t], corpus[i], config);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  SchemaNode out;
  for (const SchemaNode& s : shards) out = merge_schemas(out, s, config);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kSchemaFormat = "hmil-schema/1";
constexpr const char* kKindNames[kValueKindCount] = {"null", "bool", "integer", "real",
                                                     "string"};

Json node_to_json(const SchemaNode& s) {
  return std::visit(
      Overloaded{
          [](const std::monostate&) { return Json{{"type", "empty"}}; },
          [](const LeafSchema& l) {
            Json kinds = Json::object();
            for (std::size_t k = 0; k < kValueKindCount; ++k) kinds[kKindNames[k]] = l.kinds[k];
            Json j{{"type", "leaf"},
                   {"count", l.total},
                   {"kinds", kinds},
                   {"histogram", l.histogram},
                   {"saturated", l.saturated},
                   {"numeric_strings", l.numeric_strings}};
            if (l.numeric.count > 0) {
              j["numeric"] = Json{{"count", l.numeric.count},
                                  {"sum", l.numeric.sum.get_str()},
                                  {"sum_squares", l.numeric.sum_squares.get_str()},
                                  {"min", l.numeric.min},
                                  {"max", l.numeric.max},
                                  {"mean", l.numeric.mean()},
                                  {"variance", l.numeric.variance()}};
            }
            return j;
          },
          [](const ListSchema& l) {
            Json lengths = Json::object();
            for (const auto& [len, count] : l.lengths) lengths[std::to_string(len)] = count;
            return Json{{"type", "list"},
                        {"count", l.total},
                        {"lengths", lengths},
                        {"child", node_to_json(*l.child)}};
          },
          [](const DictSchema& d) {
            Json entries = Json::object();
            for (const auto& [key, e] : d.entries) {
              entries[key] = Json{{"presence", e.presence}, {"child", node_to_json(*e.child)}};
            }
            return Json{{"type", "dict"}, {"count", d.total}, {"entries", entries}};
          },
          [](const PolymorphicSchema& p) {
            Json branches = Json::object();
            if (p.leaf) branches["leaf"] = node_to_json(**p.leaf);
            if (p.list) branches["list"] = node_to_json(**p.list);
            if (p.dict) branches["dict"] = node_to_json(**p.dict);
            return Json{{"type", "polymorphic"}, {"branches", branches}};
          },
      },
      s.node);
}

SchemaNode node_from_json(const Json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "empty") return {};
  if (type == "leaf") {
    LeafSchema l;
    l.total = j.at("count").get<std::uint64_t>();
    for (std::size_t k = 0; k < kValueKindCount; ++k) {
      l.kinds[k] = j.at("kinds").at(kKindNames[k]).get<std::uint64_t>();
    }
    l.histogram = j.at("histogram").get<std::map<std::string, std::uint64_t>>();
    l.saturated = j.at("saturated").get<bool>();
    l.numeric_strings = j.value("numeric_strings", std::uint64_t{0});
    if (j.contains("numeric")) {
      const Json& n = j.at("numeric");
      l.numeric.count = n.at("count").get<std::uint64_t>();
      l.numeric.sum = mpq_class(n.at("sum").get<std::string>());
      l.numeric.sum_squares = mpq_class(n.at("sum_squares").get<std::string>());
      l.numeric.sum.canonicalize();
      l.numeric.sum_squares.canonicalize();
      l.numeric.min = n.at("min").get<double>();
      l.numeric.max = n.at("max").get<double>();
    }
    return SchemaNode{std::move(l)};
  }
  if (type == "list") {
    ListSchema l;
    l.total = j.at("count").get<std::uint64_t>();
    for (const auto& [len, count] : j.at("lengths").items()) {
      l.lengths[std::stoull(len)] = count.get<std::uint64_t>();
    }
    l.child = node_from_json(j.at("child"));
    return SchemaNode{std::move(l)};
  }
  if (type == "dict") {
    DictSchema d;
    d.total = j.at("count").get<std::uint64_t>();
    for (const auto& [key, e] : j.at("entries").items()) {
      d.entries.emplace(key, DictEntry{e.at("presence").get<std::uint64_t>(),
                                       node_from_json(e.at("child"))});
    }
    return SchemaNode{std::move(d)};
  }
  if (type == "polymorphic") {
    PolymorphicSchema p;
    const Json& b = j.at("branches");
    if (b.contains("leaf")) p.leaf = Box<SchemaNode>(node_from_json(b.at("leaf")));
    if (b.contains("list")) p.list = Box<SchemaNode>(node_from_json(b.at("list")));
    if (b.contains("dict")) p.dict = Box<SchemaNode>(node_from_json(b.at("dict")));
    return SchemaNode{std::move(p)};
  }
  throw Error(ErrorKind::kFormat, "unknown schema node type '" + type + "'");
}

}  // namespace

Json schema_to_json(const SchemaNode& schema, const SchemaConfig& config) {
  return Json{{"format", kSchemaFormat},
              {"max_distinct", config.max_distinct},
              {"root", node_to_json(schema)}};
}

SchemaNode schema_from_json(const Json& json, SchemaConfig* config) {
  if (!json.is_object() || !json.contains("format") ||
      json.at("format") != Json(kSchemaFormat)) {
    throw Error(ErrorKind::kFormat, std::string("expected format '") + kSchemaFormat + "'");
  }
  try {
    if (config) config->max_distinct = json.at("max_distinct").get<std::size_t>();
    return node_from_json(json.at("root"));
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("malformed schema: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorKind::kFormat, std::string("malformed schema: ") + e.what());
  }
}

}  // namespace hmil
