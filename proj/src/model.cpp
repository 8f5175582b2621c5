#include "hmil/model.hpp"

#include <cmath>
#include <random>

#include "hmil/error.hpp"
#include "overloaded.hpp"

namespace hmil {

using detail::Overloaded;

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "?";
}

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kMean: return "mean";
    case Aggregation::kMax: return "max";
    case Aggregation::kMeanMax: return "meanmax";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw Error(ErrorKind::kInvalidArgument, "unknown activation '" + name + "'");
}

Aggregation aggregation_from_string(const std::string& name) {
  if (name == "mean") return Aggregation::kMean;
  if (name == "max") return Aggregation::kMax;
  if (name == "meanmax" || name == "mean-max" || name == "mean_max") return Aggregation::kMeanMax;
  throw Error(ErrorKind::kInvalidArgument, "unknown aggregation '" + name + "'");
}

// ---------------------------------------------------------------------------
// ParamStore

template <typename Real>
std::size_t ParamStore<Real>::add(std::string name, Matrix<Real> value) {
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

template <typename Real>
std::size_t ParamStore<Real>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

template <typename Real>
std::optional<std::size_t> ParamStore<Real>::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

template <typename Real>
Real& ParamStore<Real>::scalar(std::size_t flat_index) {
  for (auto& t : tensors_) {
    const auto n = static_cast<std::size_t>(t.size());
    if (flat_index < n) return t.data()[flat_index];
    flat_index -= n;
  }
  throw Error(ErrorKind::kIndexOutOfRange, "parameter scalar index out of range");
}

template <typename Real>
ParamStore<Real> ParamStore<Real>::zeros_like() const {
  ParamStore out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    out.add(names_[i], Matrix<Real>::Zero(tensors_[i].rows(), tensors_[i].cols()));
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;

std::size_t ModelNode::embed_dim() const {
  return std::visit(Overloaded{
                        [](const ArrayModel& m) { return m.layers.back().out_dim; },
                        [](const BagModel& m) { return m.post.back().out_dim; },
                        [](const ProductModel& m) { return m.combiner.back().out_dim; },
                    },
                    node);
}

// ---------------------------------------------------------------------------
// Reflection

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  // Glorot uniform, computed from raw engine bits for portability.
  Matrix<float> glorot(std::size_t out, std::size_t in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix<float> w(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        w(i, j) = static_cast<float>((2.0 * u - 1.0) * limit);
      }
    }
    return w;
  }

 private:
  std::mt19937_64 rng_;
};

DenseChain make_chain(const std::string& prefix, std::size_t in_dim, std::size_t out_dim,
                      std::size_t depth, Activation activation, Initializer& init,
                      ParamStore<float>& params) {
  DenseChain chain;
  for (std::size_t l = 0; l < depth; ++l) {
    DenseLayer layer;
    layer.in_dim = l == 0 ? in_dim : out_dim;
    layer.out_dim = out_dim;
    layer.activation = activation;
    const std::string base = prefix + "." + std::to_string(l);
    layer.weights = params.add(base + ".weights", init.glorot(out_dim, layer.in_dim));
    layer.bias = params.add(base + ".bias",
                            Matrix<float>::Zero(static_cast<Eigen::Index>(out_dim), 1));
    chain.push_back(layer);
  }
  return chain;
}

std::size_t aggregation_width(Aggregation a, std::size_t child_dim) {
  return a == Aggregation::kMeanMax ? 2 * child_dim : child_dim;
}

ModelNode reflect_at(const DataNode& sample, const std::string& path, const ModelConfig& config,
                     Initializer& init, ParamStore<float>& params) {
  const std::size_t depth = std::max<std::size_t>(1, config.layers_per_node);
  return std::visit(
      Overloaded{
          [&](const ArrayNode& a) -> ModelNode {
            ArrayModel m;
            m.kind = leaf_kind(a.data);
            m.input_dim = leaf_rows(a.data);
            m.layers = make_chain(path + ".array.layers", m.input_dim, config.embed_dim, depth,
                                  config.activation, init, params);
            m.imputation = params.add(
                path + ".array.imputation",
                Matrix<float>::Zero(static_cast<Eigen::Index>(m.input_dim), 1));
            return {std::move(m)};
          },
          [&](const BagNode& b) -> ModelNode {
            BagModel m;
            m.child = reflect_at(*b.child, path + "[]", config, init, params);
            m.aggregation = config.aggregation;
            const std::size_t width = aggregation_width(m.aggregation, m.child->embed_dim());
            m.empty_bag = params.add(path + ".bag.empty",
                                     Matrix<float>::Zero(static_cast<Eigen::Index>(width), 1));
            m.post = make_chain(path + ".bag.post", width, config.embed_dim, depth,
                                config.activation, init, params);
            return {std::move(m)};
          },
          [&](const ProductNode& p) -> ModelNode {
            if (p.keys.empty()) {
              throw Error(ErrorKind::kShapeMismatch, "cannot reflect empty product at " + path);
            }
            ProductModel m;
            m.keys = p.keys;
            std::size_t width = 0;
            for (std::size_t k = 0; k < p.keys.size(); ++k) {
              m.children.push_back(
                  reflect_at(p.children[k], path + "." + p.keys[k], config, init, params));
              width += m.children.back().embed_dim();
            }
            m.combiner = make_chain(path + ".product.combiner", width, config.embed_dim, depth,
                                    config.activation, init, params);
            return {std::move(m)};
          },
      },
      sample.variant());
}

}  // namespace

ModelNode reflect_in_model(const DataNode& sample, const ModelConfig& config,
                           ParamStore<float>& params) {
  if (auto violations = validate(sample); !violations.empty()) {
    throw Error(ErrorKind::kShapeMismatch, "invalid sample at " + violations.front().path +
                                               ": " + violations.front().message);
  }
  if (config.embed_dim == 0) {
    throw Error(ErrorKind::kInvalidArgument, "embedding dimension must be positive");
  }
  Initializer init(config.seed);
  return reflect_at(sample, "$", config, init, params);
}

ClassifierHead make_classifier_head(std::size_t in_dim, std::size_t classes,
                                    const ModelConfig& config, ParamStore<float>& params) {
  if (classes < 2) throw Error(ErrorKind::kInvalidArgument, "classifier needs >= 2 classes");
  // Separate stream so head weights do not depend on the size of the tree.
  Initializer init(config.seed ^ 0x9e3779b97f4a7c15ULL);
  ClassifierHead head;
  head.layers = make_chain("head", in_dim, classes, 1, Activation::kIdentity, init, params);
  return head;
}

Classifier make_classifier(const DataNode& sample, std::size_t classes,
                           const ModelConfig& config) {
  Classifier c;
  c.root = reflect_in_model(sample, config, c.params);
  c.head = make_classifier_head(c.root.embed_dim(), classes, config, c.params);
  return c;
}

// ---------------------------------------------------------------------------
// Dense chains

namespace {

template <typename Real>
void activate(Activation a, const Matrix<Real>& pre, Matrix<Real>& out) {
  switch (a) {
    case Activation::kIdentity: out = pre; break;
    case Activation::kRelu: out = pre.cwiseMax(Real(0)); break;
    case Activation::kTanh: out = pre.array().tanh().matrix(); break;
  }
}

// dL/dpre given dL/dpost, in place.
template <typename Real>
void activation_backward(Activation a, const Matrix<Real>& pre, const Matrix<Real>& post,
                         Matrix<Real>& grad) {
  switch (a) {
    case Activation::kIdentity: break;
    case Activation::kRelu:
      grad = (pre.array() > Real(0)).select(grad, Real(0));
      break;
    case Activation::kTanh:
      grad.array() *= (Real(1) - post.array().square());
      break;
  }
}

template <typename Real>
Matrix<Real> affine(const DenseLayer& layer, const ParamStore<Real>& params,
                    const Matrix<Real>& input) {
  const auto& w = params[layer.weights];
  const auto& b = params[layer.bias];
  Matrix<Real> z = w * input;
  z.colwise() += b.col(0);
  return z;
}

}  // namespace

template <typename Real>
Matrix<Real> apply_chain(const DenseChain& chain, const ParamStore<Real>& params,
                         Matrix<Real> input, ChainTape<Real>* tape) {
  for (const DenseLayer& layer : chain) {
    if (static_cast<std::size_t>(input.rows()) != layer.in_dim) {
      throw Error(ErrorKind::kShapeMismatch,
                  "layer expects " + std::to_string(layer.in_dim) + " inputs, got " +
                      std::to_string(input.rows()));
    }
    Matrix<Real> pre = affine(layer, params, input);
    Matrix<Real> post;
    activate(layer.activation, pre, post);
    if (tape) {
      tape->inputs.push_back(std::move(input));
      tape->pre.push_back(std::move(pre));
      tape->post.push_back(post);
    }
    input = std::move(post);
  }
  return input;
}

template <typename Real>
Matrix<Real> backward_chain(const DenseChain& chain, const ParamStore<Real>& params,
                            const ChainTape<Real>& tape, Matrix<Real> upstream,
                            Gradients<Real>& grads) {
  for (std::size_t l = chain.size(); l-- > 0;) {
    const DenseLayer& layer = chain[l];
    activation_backward(layer.activation, tape.pre[l], tape.post[l], upstream);
    grads[layer.weights].noalias() += upstream * tape.inputs[l].transpose();
    grads[layer.bias].col(0) += upstream.rowwise().sum();
    upstream = params[layer.weights].transpose() * upstream;
  }
  return upstream;
}

template Matrix<float> apply_chain(const DenseChain&, const ParamStore<float>&, Matrix<float>,
                                   ChainTape<float>*);
template Matrix<double> apply_chain(const DenseChain&, const ParamStore<double>&,
                                    Matrix<double>, ChainTape<double>*);
template Matrix<float> backward_chain(const DenseChain&, const ParamStore<float>&,
                                      const ChainTape<float>&, Matrix<float>, Gradients<float>&);
template Matrix<double> backward_chain(const DenseChain&, const ParamStore<double>&,
                                       const ChainTape<double>&, Matrix<double>,
                                       Gradients<double>&);

// ---------------------------------------------------------------------------
// Forward / backward over the tree

template <typename Real>
struct TapeNode {
  const ModelNode* model = nullptr;
  const DataNode* data = nullptr;
  ChainTape<Real> chain;
  // Array nodes with sparse leaves: pre/post of the first layer only; its
  // input is read back from the leaf.
  std::vector<TapeNode> children;
  std::vector<Eigen::Index> argmax;  // bag max: child_dim × bags, column-major
  std::vector<std::size_t> child_rows;
};

template <typename Real>
Tape<Real>::Tape() = default;
template <typename Real>
Tape<Real>::Tape(Tape&&) noexcept = default;
template <typename Real>
Tape<Real>& Tape<Real>::operator=(Tape&&) noexcept = default;
template <typename Real>
Tape<Real>::~Tape() = default;

template <typename Real>
struct ForwardAccess {
  static void fill(Tape<Real>& tape, const ParamStore<Real>& params,
                   std::unique_ptr<TapeNode<Real>> root, std::size_t rows, std::size_t cols) {
    tape.params_ = &params;
    tape.root_ = std::move(root);
    tape.output_rows_ = rows;
    tape.output_cols_ = cols;
  }
};

namespace {

[[noreturn]] void mismatch(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::kShapeMismatch, what + " at " + path);
}

template <typename Real>
Matrix<Real> leaf_first_layer(const ArrayModel& m, const ArrayNode& a,
                              const ParamStore<Real>& params) {
  const DenseLayer& layer = m.layers.front();
  const auto& w = params[layer.weights];
  const auto& b = params[layer.bias];
  const auto& imputation = params[m.imputation];
  const auto cols = static_cast<Eigen::Index>(leaf_cols(a.data));
  Matrix<Real> z(w.rows(), cols);

  std::optional<Matrix<Real>> imputed;
  auto imputed_column = [&]() -> const Matrix<Real>& {
    if (!imputed) imputed = w * imputation;
    return *imputed;
  };

  if (const auto* o = std::get_if<OneHotMatrix>(&a.data)) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (a.missing[static_cast<std::size_t>(j)]) {
        z.col(j) = imputed_column().col(0);
      } else {
        z.col(j) = w.col(o->indices[static_cast<std::size_t>(j)]);
      }
    }
  } else {
    const auto& g = std::get<NGramMatrix>(a.data);
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      if (a.missing[uj]) {
        z.col(j) = imputed_column().col(0);
        continue;
      }
      z.col(j).setZero();
      for (std::size_t k = g.offsets[uj]; k < g.offsets[uj + 1]; ++k) {
        z.col(j) += static_cast<Real>(g.values[k]) * w.col(g.indices[k]);
      }
    }
  }
  z.colwise() += b.col(0);
  return z;
}

template <typename Real>
Matrix<Real> forward_at(const ModelNode& model, const ParamStore<Real>& params,
                        const DataNode& data, const std::string& path, TapeNode<Real>& tape) {
  tape.model = &model;
  tape.data = &data;
  return std::visit(
      Overloaded{
          [&](const ArrayModel& m) -> Matrix<Real> {
            const auto* a = data.get_if<ArrayNode>();
            if (!a) mismatch(path, "expected array data, got " + describe_shape(data));
            if (leaf_kind(a->data) != m.kind || leaf_rows(a->data) != m.input_dim) {
              mismatch(path, "leaf " + describe_shape(data) + " does not match model input " +
                                 std::to_string(m.input_dim));
            }
            const auto& imputation = params[m.imputation];
            if (const auto* d = std::get_if<DenseMatrix>(&a->data)) {
              Matrix<Real> x = d->values.template cast<Real>();
              for (Eigen::Index j = 0; j < x.cols(); ++j) {
                if (a->missing[static_cast<std::size_t>(j)]) x.col(j) = imputation.col(0);
              }
              return apply_chain(m.layers, params, std::move(x), &tape.chain);
            }
            Matrix<Real> pre = leaf_first_layer(m, *a, params);
            Matrix<Real> post;
            activate(m.layers.front().activation, pre, post);
            tape.chain.inputs.emplace_back();
            tape.chain.pre.push_back(std::move(pre));
            tape.chain.post.push_back(post);
            const DenseChain rest(m.layers.begin() + 1, m.layers.end());
            return apply_chain(rest, params, std::move(post), &tape.chain);
          },
          [&](const BagModel& m) -> Matrix<Real> {
            const auto* b = data.get_if<BagNode>();
            if (!b) mismatch(path, "expected bag data, got " + describe_shape(data));
            tape.children.resize(1);
            const Matrix<Real> h = forward_at(*m.child, params, *b->child, path + "[]",
                                              tape.children[0]);
            const Eigen::Index d = h.rows();
            const auto bags = static_cast<Eigen::Index>(b->segments.size());
            const bool use_mean = m.aggregation != Aggregation::kMax;
            const bool use_max = m.aggregation != Aggregation::kMean;
            const Eigen::Index max_row = use_mean ? d : 0;
            const auto& empty = params[m.empty_bag];
            if (empty.rows() != (use_mean && use_max ? 2 * d : d)) {
              mismatch(path, "empty-bag vector does not match aggregation width");
            }

            Matrix<Real> agg(empty.rows(), bags);
            if (use_max) tape.argmax.assign(static_cast<std::size_t>(d * bags), -1);
            for (Eigen::Index s = 0; s < bags; ++s) {
              const Segment& seg = b->segments[static_cast<std::size_t>(s)];
              if (seg.lo == seg.hi) {
                agg.col(s) = empty.col(0);
                continue;
              }
              const auto lo = static_cast<Eigen::Index>(seg.lo);
              const auto len = static_cast<Eigen::Index>(seg.size());
              if (use_mean) {
                agg.col(s).head(d) = h.middleCols(lo, len).rowwise().sum() / Real(len);
              }
              if (use_max) {
                for (Eigen::Index r = 0; r < d; ++r) {
                  Eigen::Index best = lo;
                  for (Eigen::Index k = lo + 1; k < lo + len; ++k) {
                    if (h(r, k) > h(r, best)) best = k;
                  }
                  agg(max_row + r, s) = h(r, best);
                  tape.argmax[static_cast<std::size_t>(s * d + r)] = best;
                }
              }
            }
            return apply_chain(m.post, params, std::move(agg), &tape.chain);
          },
          [&](const ProductModel& m) -> Matrix<Real> {
            const auto* p = data.get_if<ProductNode>();
            if (!p) mismatch(path, "expected product data, got " + describe_shape(data));
            if (p->keys != m.keys) mismatch(path, "product keys differ from model keys");
            tape.children.resize(m.children.size());
            std::vector<Matrix<Real>> parts;
            parts.reserve(m.children.size());
            Eigen::Index rows = 0;
            for (std::size_t k = 0; k < m.children.size(); ++k) {
              parts.push_back(forward_at(m.children[k], params, p->children[k],
                                         path + "." + m.keys[k], tape.children[k]));
              rows += parts.back().rows();
              tape.child_rows.push_back(static_cast<std::size_t>(parts.back().rows()));
            }
            const Eigen::Index cols = static_cast<Eigen::Index>(sample_count(data));
            Matrix<Real> stacked(rows, cols);
            Eigen::Index at = 0;
            for (const auto& part : parts) {
              stacked.middleRows(at, part.rows()) = part;
              at += part.rows();
            }
            return apply_chain(m.combiner, params, std::move(stacked), &tape.chain);
          },
      },
      model.node);
}

template <typename Real>
void backward_at(const TapeNode<Real>& tape, const ParamStore<Real>& params,
                 Matrix<Real> upstream, Gradients<Real>& grads) {
  std::visit(
      Overloaded{
          [&](const ArrayModel& m) {
            const auto& a = *tape.data->template get_if<ArrayNode>();
            if (std::holds_alternative<DenseMatrix>(a.data)) {
              const Matrix<Real> dx =
                  backward_chain(m.layers, params, tape.chain, std::move(upstream), grads);
              for (Eigen::Index j = 0; j < dx.cols(); ++j) {
                if (a.missing[static_cast<std::size_t>(j)]) grads[m.imputation].col(0) += dx.col(j);
              }
              return;
            }
            // Layers after the first are ordinary; tape entries are offset by one.
            for (std::size_t l = m.layers.size(); l-- > 1;) {
              const DenseLayer& layer = m.layers[l];
              activation_backward(layer.activation, tape.chain.pre[l], tape.chain.post[l],
                                  upstream);
              grads[layer.weights].noalias() += upstream * tape.chain.inputs[l].transpose();
              grads[layer.bias].col(0) += upstream.rowwise().sum();
              upstream = params[layer.weights].transpose() * upstream;
            }
            const DenseLayer& first = m.layers.front();
            activation_backward(first.activation, tape.chain.pre[0], tape.chain.post[0],
                                upstream);
            auto& dw = grads[first.weights];
            grads[first.bias].col(0) += upstream.rowwise().sum();
            const auto& imputation = params[m.imputation];
            Matrix<Real> missing_sum = Matrix<Real>::Zero(upstream.rows(), 1);
            bool any_missing = false;
            const auto* o = std::get_if<OneHotMatrix>(&a.data);
            const auto* g = std::get_if<NGramMatrix>(&a.data);
            for (Eigen::Index j = 0; j < upstream.cols(); ++j) {
              const auto uj = static_cast<std::size_t>(j);
              if (a.missing[uj]) {
                missing_sum += upstream.col(j);
                any_missing = true;
              } else if (o) {
                dw.col(o->indices[uj]) += upstream.col(j);
              } else {
                for (std::size_t k = g->offsets[uj]; k < g->offsets[uj + 1]; ++k) {
                  dw.col(g->indices[k]) += static_cast<Real>(g->values[k]) * upstream.col(j);
                }
              }
            }
            if (any_missing) {
              dw.noalias() += missing_sum * imputation.transpose();
              grads[m.imputation].noalias() += params[first.weights].transpose() * missing_sum;
            }
          },
          [&](const BagModel& m) {
            const auto& b = *tape.data->template get_if<BagNode>();
            const Matrix<Real> dagg =
                backward_chain(m.post, params, tape.chain, std::move(upstream), grads);
            const auto d = static_cast<Eigen::Index>(m.child->embed_dim());
            const bool use_mean = m.aggregation != Aggregation::kMax;
            const bool use_max = m.aggregation != Aggregation::kMean;
            const Eigen::Index max_row = use_mean ? d : 0;
            Matrix<Real> dh =
                Matrix<Real>::Zero(d, static_cast<Eigen::Index>(sample_count(*b.child)));
            for (std::size_t s = 0; s < b.segments.size(); ++s) {
              const Segment& seg = b.segments[s];
              const auto col = static_cast<Eigen::Index>(s);
              if (seg.lo == seg.hi) {
                grads[m.empty_bag].col(0) += dagg.col(col);
                continue;
              }
              const auto lo = static_cast<Eigen::Index>(seg.lo);
              const auto len = static_cast<Eigen::Index>(seg.size());
              if (use_mean) {
                dh.middleCols(lo, len).colwise() += dagg.col(col).head(d) / Real(len);
              }
              if (use_max) {
                for (Eigen::Index r = 0; r < d; ++r) {
                  dh(r, tape.argmax[s * static_cast<std::size_t>(d) + static_cast<std::size_t>(r)]) +=
                      dagg(max_row + r, col);
                }
              }
            }
            backward_at(tape.children[0], params, std::move(dh), grads);
          },
          [&](const ProductModel& m) {
            const Matrix<Real> dc =
                backward_chain(m.combiner, params, tape.chain, std::move(upstream), grads);
            Eigen::Index at = 0;
            for (std::size_t k = 0; k < m.children.size(); ++k) {
              const auto rows = static_cast<Eigen::Index>(tape.child_rows[k]);
              backward_at(tape.children[k], params, Matrix<Real>(dc.middleRows(at, rows)), grads);
              at += rows;
            }
          },
      },
      tape.model->node);
}

}  // namespace

template <typename Real>
ForwardResult<Real> forward(const ModelNode& model, const ParamStore<Real>& params,
                            const DataNode& data) {
  auto root = std::make_unique<TapeNode<Real>>();
  Matrix<Real> out = forward_at(model, params, data, "$", *root);
  ForwardResult<Real> result{std::move(out), Tape<Real>()};
  ForwardAccess<Real>::fill(result.tape, params, std::move(root),
                            static_cast<std::size_t>(result.output.rows()),
                            static_cast<std::size_t>(result.output.cols()));
  return result;
}

template <typename Real>
void backward_into(const Tape<Real>& tape, const Matrix<Real>& upstream,
                   Gradients<Real>& grads) {
  if (static_cast<std::size_t>(upstream.rows()) != tape.output_rows() ||
      static_cast<std::size_t>(upstream.cols()) != tape.output_cols()) {
    throw Error(ErrorKind::kShapeMismatch, "upstream gradient shape differs from output");
  }
  if (grads.size() != tape.params().size()) {
    throw Error(ErrorKind::kShapeMismatch, "gradient store is not congruent with parameters");
  }
  backward_at(tape.root(), tape.params(), upstream, grads);
}

template <typename Real>
Gradients<Real> backward(const Tape<Real>& tape, const Matrix<Real>& upstream) {
  Gradients<Real> grads = tape.params().zeros_like();
  backward_into(tape, upstream, grads);
  return grads;
}

template <typename Real>
Matrix<Real> predict(const ModelNode& model, const ClassifierHead& head,
                     const ParamStore<Real>& params, const DataNode& data) {
  return apply_chain(head.layers, params, forward(model, params, data).output);
}

Matrix<float> predict(const Classifier& classifier, const DataNode& data) {
  return predict(classifier.root, classifier.head, classifier.params, data);
}

template <typename Real>
void append_activation_pattern(const DenseChain& chain, const ChainTape<Real>& tape,
                               std::vector<std::int64_t>& out) {
  for (std::size_t l = 0; l < chain.size() && l < tape.pre.size(); ++l) {
    if (chain[l].activation != Activation::kRelu) continue;
    const Matrix<Real>& z = tape.pre[l];
    for (Eigen::Index k = 0; k < z.size(); ++k) out.push_back(z.data()[k] > Real(0));
  }
}

namespace {

template <typename Real>
void pattern_at(const TapeNode<Real>& node, std::vector<std::int64_t>& out) {
  const DenseChain& chain = std::visit(
      Overloaded{[](const ArrayModel& m) -> const DenseChain& { return m.layers; },
                 [](const BagModel& m) -> const DenseChain& { return m.post; },
                 [](const ProductModel& m) -> const DenseChain& { return m.combiner; }},
      node.model->node);
  append_activation_pattern(chain, node.chain, out);
  out.insert(out.end(), node.argmax.begin(), node.argmax.end());
  for (const TapeNode<Real>& child : node.children) pattern_at(child, out);
}

}  // namespace

template <typename Real>
std::vector<std::int64_t> activation_pattern(const Tape<Real>& tape) {
  std::vector<std::int64_t> out;
  pattern_at(tape.root(), out);
  return out;
}

#define HMIL_INSTANTIATE(Real)                                                              \
  template class Tape<Real>;                                                               \
  template ForwardResult<Real> forward(const ModelNode&, const ParamStore<Real>&,          \
                                       const DataNode&);                                   \
  template void backward_into(const Tape<Real>&, const Matrix<Real>&, Gradients<Real>&);   \
  template Gradients<Real> backward(const Tape<Real>&, const Matrix<Real>&);               \
  template Matrix<Real> predict(const ModelNode&, const ClassifierHead&,                   \
                                const ParamStore<Real>&, const DataNode&);                  \
  template std::vector<std::int64_t> activation_pattern(const Tape<Real>&);                \
  template void append_activation_pattern(const DenseChain&, const ChainTape<Real>&,       \
                                          std::vector<std::int64_t>&);

HMIL_INSTANTIATE(float)
HMIL_INSTANTIATE(double)

#undef HMIL_INSTANTIATE

}  // namespace hmil
