#include "hmil/data.hpp"

#include <algorithm>
#include <sstream>

#include "hmil/error.hpp"
#include "overloaded.hpp"

namespace hmil {

namespace {

using detail::Overloaded;

std::string child_path(const std::string& path, const std::string& key) {
  return path + "." + key;
}

std::string bag_path(const std::string& path) { return path + "[]"; }

void check_congruent_leaves(const LeafMatrix& a, const LeafMatrix& b,
                            const std::string& path) {
  if (a.index() != b.index()) {
    throw Error(ErrorKind::kShapeMismatch, "leaf kinds differ at " + path);
  }
  if (leaf_rows(a) != leaf_rows(b)) {
    throw Error(ErrorKind::kShapeMismatch,
                "leaf dimensions differ at " + path + " (" +
                    std::to_string(leaf_rows(a)) + " vs " +
                    std::to_string(leaf_rows(b)) + ")");
  }
}

LeafMatrix concat_leaves(std::span<const ArrayNode* const> nodes,
                         const std::string& path) {
  const LeafMatrix& first = nodes.front()->data;
  for (const ArrayNode* n : nodes) check_congruent_leaves(first, n->data, path);

  return std::visit(
      Overloaded{
          [&](const DenseMatrix& d) -> LeafMatrix {
            Eigen::Index total = 0;
            for (const ArrayNode* n : nodes) {
              total += std::get<DenseMatrix>(n->data).values.cols();
            }
            DenseMatrix out{Matrixf(d.values.rows(), total)};
            Eigen::Index at = 0;
            for (const ArrayNode* n : nodes) {
              const auto& v = std::get<DenseMatrix>(n->data).values;
              out.values.middleCols(at, v.cols()) = v;
              at += v.cols();
            }
            return out;
          },
          [&](const OneHotMatrix& o) -> LeafMatrix {
            OneHotMatrix out{o.vocab_size, {}};
            for (const ArrayNode* n : nodes) {
              const auto& idx = std::get<OneHotMatrix>(n->data).indices;
              out.indices.insert(out.indices.end(), idx.begin(), idx.end());
            }
            return out;
          },
          [&](const NGramMatrix& g) -> LeafMatrix {
            NGramMatrix out;
            out.hash_dim = g.hash_dim;
            for (const ArrayNode* n : nodes) {
              const auto& src = std::get<NGramMatrix>(n->data);
              const std::size_t base = out.indices.size();
              out.indices.insert(out.indices.end(), src.indices.begin(),
                                 src.indices.end());
              out.values.insert(out.values.end(), src.values.begin(),
                                src.values.end());
              for (std::size_t j = 1; j < src.offsets.size(); ++j) {
                out.offsets.push_back(base + src.offsets[j]);
              }
            }
            return out;
          },
      },
      first);
}

LeafMatrix slice_leaf(const LeafMatrix& leaf, std::span<const std::size_t> idx) {
  return std::visit(
      Overloaded{
          [&](const DenseMatrix& d) -> LeafMatrix {
            DenseMatrix out{Matrixf(d.values.rows(),
                                    static_cast<Eigen::Index>(idx.size()))};
            for (std::size_t j = 0; j < idx.size(); ++j) {
              out.values.col(static_cast<Eigen::Index>(j)) =
                  d.values.col(static_cast<Eigen::Index>(idx[j]));
            }
            return out;
          },
          [&](const OneHotMatrix& o) -> LeafMatrix {
            OneHotMatrix out{o.vocab_size, {}};
            out.indices.reserve(idx.size());
            for (std::size_t i : idx) out.indices.push_back(o.indices[i]);
            return out;
          },
          [&](const NGramMatrix& g) -> LeafMatrix {
            NGramMatrix out;
            out.hash_dim = g.hash_dim;
            out.offsets.reserve(idx.size() + 1);
            for (std::size_t i : idx) {
              for (std::size_t k = g.offsets[i]; k < g.offsets[i + 1]; ++k) {
                out.indices.push_back(g.indices[k]);
                out.values.push_back(g.values[k]);
              }
              out.offsets.push_back(out.indices.size());
            }
            return out;
          },
      },
      leaf);
}

DataNode concat_at(std::span<const DataNode> nodes, const std::string& path) {
  const DataNode& first = nodes.front();
  for (const DataNode& n : nodes) {
    if (n.variant().index() != first.variant().index()) {
      throw Error(ErrorKind::kShapeMismatch,
                  "node variants differ at " + path + " (" + describe_shape(first) +
                      " vs " + describe_shape(n) + ")");
    }
  }

  if (first.is_array()) {
    std::vector<const ArrayNode*> arrays;
    arrays.reserve(nodes.size());
    std::vector<bool> missing;
    for (const DataNode& n : nodes) {
      const auto* a = n.get_if<ArrayNode>();
      arrays.push_back(a);
      missing.insert(missing.end(), a->missing.begin(), a->missing.end());
    }
    return ArrayNode{concat_leaves(arrays, path), std::move(missing)};
  }

  if (first.is_bag()) {
    std::vector<DataNode> children;
    children.reserve(nodes.size());
    std::vector<Segment> segments;
    std::size_t offset = 0;
    for (const DataNode& n : nodes) {
      const auto* b = n.get_if<BagNode>();
      for (const Segment& s : b->segments) {
        segments.push_back({s.lo + offset, s.hi + offset});
      }
      offset += sample_count(*b->child);
      children.push_back(*b->child);
    }
    return BagNode{std::make_shared<const DataNode>(concat_at(children, bag_path(path))),
                   std::move(segments)};
  }

  const auto& p0 = *first.get_if<ProductNode>();
  for (const DataNode& n : nodes) {
    if (n.get_if<ProductNode>()->keys != p0.keys) {
      throw Error(ErrorKind::kShapeMismatch, "product key sets differ at " + path);
    }
  }
  ProductNode out{p0.keys, {}};
  out.children.reserve(p0.keys.size());
  std::vector<DataNode> column;
  for (std::size_t k = 0; k < p0.keys.size(); ++k) {
    column.clear();
    for (const DataNode& n : nodes) column.push_back(n.get_if<ProductNode>()->children[k]);
    out.children.push_back(concat_at(column, child_path(path, p0.keys[k])));
  }
  return out;
}

void validate_at(const DataNode& node, const std::string& path,
                 std::vector<Violation>& out) {
  std::visit(
      Overloaded{
          [&](const ArrayNode& a) {
            const std::size_t cols = leaf_cols(a.data);
            if (a.missing.size() != cols) {
              out.push_back({path, "missing-mask length " +
                                       std::to_string(a.missing.size()) +
                                       " differs from column count " +
                                       std::to_string(cols)});
            }
            if (const auto* o = std::get_if<OneHotMatrix>(&a.data)) {
              for (std::size_t j = 0; j < o->indices.size(); ++j) {
                const auto i = o->indices[j];
                if (i != OneHotMatrix::kMissing && i >= o->vocab_size) {
                  out.push_back({path, "one-hot index " + std::to_string(i) +
                                           " in column " + std::to_string(j) +
                                           " exceeds vocabulary size " +
                                           std::to_string(o->vocab_size)});
                }
              }
            } else if (const auto* ng = std::get_if<NGramMatrix>(&a.data)) {
              const auto& g = *ng;
              if (g.offsets.empty() || g.offsets.front() != 0 ||
                  g.offsets.back() != g.indices.size() ||
                  g.indices.size() != g.values.size()) {
                out.push_back({path, "n-gram column offsets are inconsistent"});
                return;
              }
              for (std::size_t j = 0; j + 1 < g.offsets.size(); ++j) {
                if (g.offsets[j] > g.offsets[j + 1]) {
                  out.push_back({path, "n-gram offsets decrease at column " +
                                           std::to_string(j)});
                  return;
                }
                for (std::size_t k = g.offsets[j]; k < g.offsets[j + 1]; ++k) {
                  if (g.indices[k] >= g.hash_dim) {
                    out.push_back({path, "n-gram index overflow in column " +
                                             std::to_string(j)});
                  }
                  if (k > g.offsets[j] && g.indices[k] <= g.indices[k - 1]) {
                    out.push_back({path, "n-gram indices not strictly increasing "
                                         "in column " + std::to_string(j)});
                  }
                }
              }
            }
          },
          [&](const BagNode& b) {
            if (!b.child) {
              out.push_back({path, "bag has no child"});
              return;
            }
            const std::size_t n = sample_count(*b.child);
            std::size_t expect = 0;
            for (std::size_t i = 0; i < b.segments.size(); ++i) {
              const Segment& s = b.segments[i];
              if (s.lo > s.hi) {
                out.push_back({path, "segment " + std::to_string(i) + " is reversed"});
              } else if (s.lo < expect) {
                out.push_back({path, "segment " + std::to_string(i) +
                                         " overlaps its predecessor"});
              } else if (s.lo > expect) {
                out.push_back({path, "child range [" + std::to_string(expect) + "," +
                                         std::to_string(s.lo) + ") is not covered"});
              }
              expect = std::max(expect, s.hi);
            }
            if (expect < n) {
              out.push_back({path, "child range [" + std::to_string(expect) + "," +
                                       std::to_string(n) + ") is not covered"});
            } else if (expect > n) {
              out.push_back({path, "segments reach " + std::to_string(expect) +
                                       " beyond child count " + std::to_string(n)});
            }
            validate_at(*b.child, bag_path(path), out);
          },
          [&](const ProductNode& p) {
            if (p.keys.size() != p.children.size()) {
              out.push_back({path, "product has mismatched key and child counts"});
              return;
            }
            if (p.keys.empty()) {
              out.push_back({path, "product has no entries"});
              return;
            }
            for (std::size_t k = 1; k < p.keys.size(); ++k) {
              if (!(p.keys[k - 1] < p.keys[k])) {
                out.push_back({path, "product keys not strictly sorted at '" +
                                         p.keys[k] + "'"});
              }
            }
            const std::size_t n0 = sample_count(p.children[0]);
            for (std::size_t k = 1; k < p.children.size(); ++k) {
              const std::size_t nk = sample_count(p.children[k]);
              if (nk != n0) {
                out.push_back({path, "children '" + p.keys[0] + "' (" +
                                         std::to_string(n0) + ") and '" + p.keys[k] +
                                         "' (" + std::to_string(nk) +
                                         ") have different sample counts"});
              }
            }
            for (std::size_t k = 0; k < p.children.size(); ++k) {
              validate_at(p.children[k], child_path(path, p.keys[k]), out);
            }
          },
      },
      node.variant());
}

bool leaves_equal(const LeafMatrix& a, const LeafMatrix& b) {
  if (a.index() != b.index()) return false;
  return std::visit(
      Overloaded{
          [&](const DenseMatrix& x) {
            const auto& y = std::get<DenseMatrix>(b);
            return x.values.rows() == y.values.rows() &&
                   x.values.cols() == y.values.cols() &&
                   std::equal(x.values.data(), x.values.data() + x.values.size(),
                              y.values.data());
          },
          [&](const OneHotMatrix& x) {
            const auto& y = std::get<OneHotMatrix>(b);
            return x.vocab_size == y.vocab_size && x.indices == y.indices;
          },
          [&](const NGramMatrix& x) {
            const auto& y = std::get<NGramMatrix>(b);
            return x.hash_dim == y.hash_dim && x.offsets == y.offsets &&
                   x.indices == y.indices && x.values == y.values;
          },
      },
      a);
}

}  // namespace

LeafKind leaf_kind(const LeafMatrix& leaf) { return static_cast<LeafKind>(leaf.index()); }

std::size_t leaf_rows(const LeafMatrix& leaf) {
  return std::visit([](const auto& m) { return m.rows(); }, leaf);
}

std::size_t leaf_cols(const LeafMatrix& leaf) {
  return std::visit([](const auto& m) { return m.cols(); }, leaf);
}

bool operator==(const DataNode& a, const DataNode& b) {
  if (a.variant().index() != b.variant().index()) return false;
  if (const auto* x = a.get_if<ArrayNode>()) {
    const auto* y = b.get_if<ArrayNode>();
    return x->missing == y->missing && leaves_equal(x->data, y->data);
  }
  if (const auto* x = a.get_if<BagNode>()) {
    const auto* y = b.get_if<BagNode>();
    return x->segments == y->segments && *x->child == *y->child;
  }
  const auto* x = a.get_if<ProductNode>();
  const auto* y = b.get_if<ProductNode>();
  return x->keys == y->keys && x->children == y->children;
}

DataNode make_dense(Matrixf values, std::vector<bool> missing) {
  if (missing.empty()) missing.assign(static_cast<std::size_t>(values.cols()), false);
  return ArrayNode{DenseMatrix{std::move(values)}, std::move(missing)};
}

DataNode make_bag(DataNode child, std::vector<Segment> segments) {
  return BagNode{std::make_shared<const DataNode>(std::move(child)), std::move(segments)};
}

DataNode make_product(std::vector<std::pair<std::string, DataNode>> entries) {
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  ProductNode out;
  for (auto& [key, child] : entries) {
    out.keys.push_back(key);
    out.children.push_back(std::move(child));
  }
  return out;
}

std::size_t sample_count(const DataNode& node) {
  return std::visit(Overloaded{
                        [](const ArrayNode& a) { return leaf_cols(a.data); },
                        [](const BagNode& b) { return b.segments.size(); },
                        [](const ProductNode& p) {
                          return p.children.empty() ? std::size_t{0}
                                                    : sample_count(p.children.front());
                        },
                    },
                    node.variant());
}

DataNode concat_samples(std::span<const DataNode> nodes) {
  if (nodes.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "concat_samples needs at least one node");
  }
  return concat_at(nodes, "$");
}

DataNode slice(const DataNode& node, std::span<const std::size_t> indices) {
  const std::size_t n = sample_count(node);
  for (std::size_t i : indices) {
    if (i >= n) {
      throw Error(ErrorKind::kIndexOutOfRange, "sample index " + std::to_string(i) +
                                                   " out of range for batch of " +
                                                   std::to_string(n));
    }
  }
  return std::visit(
      Overloaded{
          [&](const ArrayNode& a) -> DataNode {
            std::vector<bool> missing;
            missing.reserve(indices.size());
            for (std::size_t i : indices) missing.push_back(a.missing[i]);
            return ArrayNode{slice_leaf(a.data, indices), std::move(missing)};
          },
          [&](const BagNode& b) -> DataNode {
            std::vector<Segment> segments;
            segments.reserve(indices.size());
            std::vector<std::size_t> gather;
            for (std::size_t i : indices) {
              const Segment& s = b.segments[i];
              const std::size_t lo = gather.size();
              for (std::size_t k = s.lo; k < s.hi; ++k) gather.push_back(k);
              segments.push_back({lo, gather.size()});
            }
            return BagNode{std::make_shared<const DataNode>(slice(*b.child, gather)),
                           std::move(segments)};
          },
          [&](const ProductNode& p) -> DataNode {
            ProductNode out{p.keys, {}};
            out.children.reserve(p.children.size());
            for (const DataNode& c : p.children) out.children.push_back(slice(c, indices));
            return out;
          },
      },
      node.variant());
}

std::vector<Violation> validate(const DataNode& node) {
  std::vector<Violation> out;
  validate_at(node, "$", out);
  return out;
}

std::string describe_shape(const DataNode& node) {
  return std::visit(
      Overloaded{
          [](const ArrayNode& a) {
            static constexpr const char* kNames[] = {"dense", "onehot", "ngram"};
            return std::string("array<") + kNames[a.data.index()] + "," +
                   std::to_string(leaf_rows(a.data)) + ">";
          },
          [](const BagNode& b) {
            return "bag<" + (b.child ? describe_shape(*b.child) : std::string("?")) + ">";
          },
          [](const ProductNode& p) {
            std::ostringstream os;
            os << "product{";
            for (std::size_t k = 0; k < p.keys.size(); ++k) {
              if (k) os << ",";
              os << p.keys[k] << ":" << describe_shape(p.children[k]);
            }
            os << "}";
            return os.str();
          },
      },
      node.variant());
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::kDepthExceeded: return "DepthExceeded";
    case ErrorKind::kParse: return "ParseError";
    case ErrorKind::kEmptySchema: return "EmptySchema";
    case ErrorKind::kFormat: return "FormatError";
    case ErrorKind::kVersionMismatch: return "VersionMismatch";
    case ErrorKind::kCorruptContainer: return "CorruptContainer";
    case ErrorKind::kEmptyBatch: return "EmptyBatch";
    case ErrorKind::kSingleClass: return "SingleClass";
    case ErrorKind::kUnknownLabel: return "UnknownLabel";
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kIo: return "IoError";
  }
  return "Error";
}

}  // namespace hmil
