#pragma once

// Batched hierarchical data containers. Every node stores a whole batch;
// samples are columns of leaf matrices, bags index contiguous child column
// ranges and products hold one child per key in lexicographic key order.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace hmil {

using Matrixf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;

/// Dense features, one column per sample.
struct DenseMatrix {
  Matrixf values;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

/// One category index per sample, or kMissing.
struct OneHotMatrix {
  static constexpr std::uint32_t kMissing = std::numeric_limits<std::uint32_t>::max();

  std::size_t vocab_size = 0;
  std::vector<std::uint32_t> indices;

  std::size_t rows() const { return vocab_size; }
  std::size_t cols() const { return indices.size(); }
};

/// Hashed n-gram histogram stored column-compressed: entries of column j are
/// [offsets[j], offsets[j+1]) in `indices`/`values`.
struct NGramMatrix {
  std::size_t hash_dim = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> indices;
  std::vector<float> values;

  std::size_t rows() const { return hash_dim; }
  std::size_t cols() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

using LeafMatrix = std::variant<DenseMatrix, OneHotMatrix, NGramMatrix>;

enum class LeafKind { kDense, kOneHot, kNGram };

LeafKind leaf_kind(const LeafMatrix& leaf);
std::size_t leaf_rows(const LeafMatrix& leaf);
std::size_t leaf_cols(const LeafMatrix& leaf);

struct ArrayNode {
  LeafMatrix data;
  std::vector<bool> missing;  // one flag per column
};

struct Segment {
  std::size_t lo = 0;
  std::size_t hi = 0;

  std::size_t size() const { return hi - lo; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

class DataNode;

struct BagNode {
  std::shared_ptr<const DataNode> child;
  std::vector<Segment> segments;
};

struct ProductNode {
  std::vector<std::string> keys;  // sorted, unique
  std::vector<DataNode> children;
};

class DataNode {
 public:
  using Variant = std::variant<ArrayNode, BagNode, ProductNode>;

  DataNode(ArrayNode node) : node_(std::move(node)) {}    // NOLINT
  DataNode(BagNode node) : node_(std::move(node)) {}      // NOLINT
  DataNode(ProductNode node) : node_(std::move(node)) {}  // NOLINT

  const Variant& variant() const { return node_; }

  template <typename T>
  const T* get_if() const { return std::get_if<T>(&node_); }

  bool is_array() const { return std::holds_alternative<ArrayNode>(node_); }
  bool is_bag() const { return std::holds_alternative<BagNode>(node_); }
  bool is_product() const { return std::holds_alternative<ProductNode>(node_); }

 private:
  Variant node_;
};

// Structural and bitwise equality of leaf payloads.
bool operator==(const DataNode& a, const DataNode& b);

// Convenience constructors.
DataNode make_dense(Matrixf values, std::vector<bool> missing = {});
DataNode make_bag(DataNode child, std::vector<Segment> segments);
/// Keys need not be sorted; entries are reordered lexicographically.
DataNode make_product(std::vector<std::pair<std::string, DataNode>> entries);

std::size_t sample_count(const DataNode& node);

/// Stacks congruent batches. Throws ShapeMismatch on structural differences.
DataNode concat_samples(std::span<const DataNode> nodes);

/// Gathers the given samples in order; duplicates allowed.
DataNode slice(const DataNode& node, std::span<const std::size_t> indices);

struct Violation {
  std::string path;
  std::string message;
};

/// Every invariant violation in the tree, each located by a path such as
/// "$.upnp[].model_name". Empty result means the node is valid.
std::vector<Violation> validate(const DataNode& node);

/// Human readable summary of the shape of a node (used in error messages).
std::string describe_shape(const DataNode& node);

}  // namespace hmil
