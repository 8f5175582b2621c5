#pragma once

// Model trees mirroring DataNode structure, with a hand-written reverse-mode
// pass. Structure (ModelNode) is separate from parameters (ParamStore) so the
// same tree runs in 32-bit production mode and in 64-bit gradient-check mode.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "hmil/box.hpp"
#include "hmil/data.hpp"

namespace hmil {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

enum class Activation { kIdentity, kRelu, kTanh };
enum class Aggregation { kMean, kMax, kMeanMax };

std::string to_string(Activation a);
std::string to_string(Aggregation a);
Activation activation_from_string(const std::string& name);
Aggregation aggregation_from_string(const std::string& name);

/// Flat, path-addressed registry of parameter tensors. A congruent store of
/// zeros doubles as the gradient accumulator.
template <typename Real>
class ParamStore {
 public:
  std::size_t add(std::string name, Matrix<Real> value);

  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  Matrix<Real>& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix<Real>& operator[](std::size_t i) const { return tensors_[i]; }
  std::optional<std::size_t> find(const std::string& name) const;

  /// Scalar access across all tensors in registration order.
  Real& scalar(std::size_t flat_index);

  ParamStore zeros_like() const;
  template <typename To>
  ParamStore<To> cast() const {
    ParamStore<To> out;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      out.add(names_[i], tensors_[i].template cast<To>());
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<Real>> tensors_;
};

template <typename Real>
using Gradients = ParamStore<Real>;

/// One dense layer; `weights` and `bias` index into a ParamStore.
struct DenseLayer {
  std::size_t weights = 0;
  std::size_t bias = 0;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::kRelu;
};

using DenseChain = std::vector<DenseLayer>;

struct ArrayModel {
  LeafKind kind = LeafKind::kDense;
  std::size_t input_dim = 0;
  std::size_t imputation = 0;  // input_dim × 1 parameter
  DenseChain layers;
};

struct ModelNode;

struct BagModel {
  Box<ModelNode> child;
  Aggregation aggregation = Aggregation::kMeanMax;
  std::size_t empty_bag = 0;  // aggregation-output × 1 parameter
  DenseChain post;
};

struct ProductModel {
  std::vector<std::string> keys;
  std::vector<ModelNode> children;
  DenseChain combiner;
};

struct ModelNode {
  std::variant<ArrayModel, BagModel, ProductModel> node;

  std::size_t embed_dim() const;
};

struct ClassifierHead {
  DenseChain layers;

  std::size_t classes() const { return layers.empty() ? 0 : layers.back().out_dim; }
};

/// Root model, classifier head and the parameters they index.
struct Classifier {
  ModelNode root;
  ClassifierHead head;
  ParamStore<float> params;
};

struct ModelConfig {
  std::size_t embed_dim = 32;
  Activation activation = Activation::kRelu;
  Aggregation aggregation = Aggregation::kMeanMax;
  std::size_t layers_per_node = 1;
  std::uint64_t seed = 0;
};

/// Builds a model congruent to `sample`, registering Glorot-initialized
/// parameters in `params`. Leaf input dimensions come from the leaf matrices,
/// so samples with zero columns or fully missing leaves reflect fine.
ModelNode reflect_in_model(const DataNode& sample, const ModelConfig& config,
                           ParamStore<float>& params);

/// Dense chain embed_dim → classes with identity output activation.
ClassifierHead make_classifier_head(std::size_t in_dim, std::size_t classes,
                                    const ModelConfig& config, ParamStore<float>& params);

Classifier make_classifier(const DataNode& sample, std::size_t classes,
                           const ModelConfig& config);

/// Intermediate values of one dense chain evaluation.
template <typename Real>
struct ChainTape {
  std::vector<Matrix<Real>> inputs;
  std::vector<Matrix<Real>> pre;
  std::vector<Matrix<Real>> post;
};

template <typename Real>
Matrix<Real> apply_chain(const DenseChain& chain, const ParamStore<Real>& params,
                         Matrix<Real> input, ChainTape<Real>* tape = nullptr);

/// Accumulates parameter gradients into `grads`; returns d input.
template <typename Real>
Matrix<Real> backward_chain(const DenseChain& chain, const ParamStore<Real>& params,
                            const ChainTape<Real>& tape, Matrix<Real> upstream,
                            Gradients<Real>& grads);

template <typename Real>
struct TapeNode;

/// Everything recorded by `forward` that `backward` needs. References the
/// model, parameters and data it was produced from; they must outlive it.
template <typename Real>
class Tape {
 public:
  Tape();
  Tape(Tape&&) noexcept;
  Tape& operator=(Tape&&) noexcept;
  ~Tape();

  const ParamStore<Real>& params() const { return *params_; }
  const TapeNode<Real>& root() const { return *root_; }
  std::size_t output_rows() const { return output_rows_; }
  std::size_t output_cols() const { return output_cols_; }

 private:
  template <typename R>
  friend struct ForwardAccess;

  const ParamStore<Real>* params_ = nullptr;
  std::unique_ptr<TapeNode<Real>> root_;
  std::size_t output_rows_ = 0;
  std::size_t output_cols_ = 0;
};

template <typename Real>
struct ForwardResult {
  Matrix<Real> output;  // embed_dim × sample_count
  Tape<Real> tape;
};

/// Throws ShapeMismatch (with the node path) when data and model disagree.
template <typename Real>
ForwardResult<Real> forward(const ModelNode& model, const ParamStore<Real>& params,
                            const DataNode& data);

/// Gradients for every parameter of the store the tape was recorded with
/// (zero for parameters outside the forwarded subtree).
template <typename Real>
Gradients<Real> backward(const Tape<Real>& tape, const Matrix<Real>& upstream);

/// Accumulating variant used by the training loop.
template <typename Real>
void backward_into(const Tape<Real>& tape, const Matrix<Real>& upstream, Gradients<Real>& grads);

/// Linear piece a forward pass landed on: ReLU signs and max-pool routing.
/// Equal patterns at two parameter settings mean no kink was crossed
/// between them (up to crossing back and forth).
template <typename Real>
std::vector<std::int64_t> activation_pattern(const Tape<Real>& tape);
template <typename Real>
void append_activation_pattern(const DenseChain& chain, const ChainTape<Real>& tape,
                               std::vector<std::int64_t>& out);

/// Logits (classes × sample_count); no softmax.
Matrix<float> predict(const Classifier& classifier, const DataNode& data);
template <typename Real>
Matrix<Real> predict(const ModelNode& model, const ClassifierHead& head,
                     const ParamStore<Real>& params, const DataNode& data);

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Loss over a network output; fills the output gradient when non-null.
template <typename Real>
using LossFn = std::function<double(const Matrix<Real>& output, Matrix<Real>* grad)>;

struct GradCheckOptions {
  double epsilon = 1e-3;
  std::size_t max_params = 200;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst_parameter;
  std::vector<std::string> warnings;
};

/// Compares `backward` against central differences on a random subsample of
/// scalar parameters. With a head, the loss is applied to the head output.
/// A parameter whose ±epsilon perturbation changes the activation pattern
/// straddles a kink; it is skipped and the next candidate is drawn.
template <typename Real>
GradCheckResult grad_check(const ModelNode& model, const ClassifierHead* head,
                           const ParamStore<Real>& params, const DataNode& data,
                           const LossFn<Real>& loss, const GradCheckOptions& options = {});

}  // namespace hmil
