#include <gtest/gtest.h>

#include <array>

#include "hmil/error.hpp"
#include "hmil/model.hpp"
#include "hmil/training.hpp"
#include "support.hpp"

namespace hmil {
namespace {

using testing::Rng;
using Md = Matrix<double>;

DenseLayer identity_layer(ParamStore<double>& ps, const std::string& name, std::size_t dim) {
  DenseLayer l;
  l.weights = ps.add(name + ".weights", Md::Identity(static_cast<Eigen::Index>(dim),
                                                     static_cast<Eigen::Index>(dim)));
  l.bias = ps.add(name + ".bias", Md::Zero(static_cast<Eigen::Index>(dim), 1));
  l.in_dim = l.out_dim = dim;
  l.activation = Activation::kIdentity;
  return l;
}

ModelNode identity_leaf(ParamStore<double>& ps, std::size_t dim) {
  ArrayModel m;
  m.input_dim = dim;
  m.imputation = ps.add("leaf.imputation", Md::Zero(static_cast<Eigen::Index>(dim), 1));
  m.layers = {identity_layer(ps, "leaf", dim)};
  return {std::move(m)};
}

/// Identity bag over a 2-dim identity leaf.
ModelNode identity_bag(ParamStore<double>& ps, Aggregation aggregation) {
  BagModel m;
  m.child = identity_leaf(ps, 2);
  m.aggregation = aggregation;
  const std::size_t width = aggregation == Aggregation::kMeanMax ? 4 : 2;
  m.empty_bag = ps.add("bag.empty", Md::Constant(static_cast<Eigen::Index>(width), 1, 7.0));
  m.post = {identity_layer(ps, "bag.post", width)};
  return {std::move(m)};
}

DataNode two_instance_bag() {
  Matrixf x(2, 2);
  x << 1, 3, 2, 4;  // instances (1,2) and (3,4)
  return make_bag(make_dense(x), {{0, 2}});
}

void randomize(ParamStore<double>& ps, Rng& rng, double sd = 0.5) {
  std::normal_distribution<double> normal(0.0, sd);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (Eigen::Index k = 0; k < ps[i].size(); ++k) ps[i].data()[k] = normal(rng);
  }
}

TEST(Reflect, DimensionArithmetic) {
  ParamStore<float> ps;
  const DataNode leaf = make_dense(Matrixf::Zero(4, 1));
  const ModelNode array = reflect_in_model(leaf, {}, ps);
  const auto& am = std::get<ArrayModel>(array.node);
  EXPECT_EQ(ps[am.layers.front().weights].rows(), 32);
  EXPECT_EQ(ps[am.layers.front().weights].cols(), 4);
  EXPECT_EQ(array.embed_dim(), 32u);

  ParamStore<float> ps2;
  const ModelNode bag = reflect_in_model(make_bag(leaf, {{0, 1}}), {}, ps2);
  const auto& bm = std::get<BagModel>(bag.node);
  EXPECT_EQ(bm.child->embed_dim(), 32u);
  EXPECT_EQ(bm.post.front().in_dim, 64u);
  EXPECT_EQ(bm.post.back().out_dim, 32u);
  EXPECT_EQ(ps2[bm.empty_bag].rows(), 64);

  ParamStore<float> ps3;
  const ModelNode product = reflect_in_model(make_product({{"a", leaf}, {"b", leaf}}), {}, ps3);
  EXPECT_EQ(std::get<ProductModel>(product.node).combiner.front().in_dim, 64u);
}

TEST(Reflect, ParameterNamesAndInitialization) {
  ParamStore<float> ps;
  ModelConfig config;
  config.seed = 3;
  reflect_in_model(make_product({{"x", make_bag(make_dense(Matrixf::Zero(3, 2)), {{0, 2}})}}),
                   config, ps);
  ASSERT_TRUE(ps.find("$.x.bag.empty"));
  ASSERT_TRUE(ps.find("$.x[].array.imputation"));
  const auto w = ps.find("$.x[].array.layers.0.weights");
  ASSERT_TRUE(w);
  const double limit = std::sqrt(6.0 / (3.0 + 32.0));
  EXPECT_LE(ps[*w].cwiseAbs().maxCoeff(), limit);
  EXPECT_GT(ps[*w].cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_EQ(ps[*ps.find("$.x[].array.layers.0.bias")].cwiseAbs().maxCoeff(), 0.0f);

  ParamStore<float> again;
  reflect_in_model(make_product({{"x", make_bag(make_dense(Matrixf::Zero(3, 2)), {{0, 2}})}}),
                   config, again);
  EXPECT_EQ(ps[*w], again[*w]);
}

TEST(Forward, MeanAndMaxAggregation) {
  ParamStore<double> ps;
  const ModelNode mean = identity_bag(ps, Aggregation::kMean);
  Md out = forward(mean, ps, two_instance_bag()).output;
  EXPECT_EQ(out, (Md(2, 1) << 2, 3).finished());

  ParamStore<double> ps2;
  const ModelNode max = identity_bag(ps2, Aggregation::kMax);
  out = forward(max, ps2, two_instance_bag()).output;
  EXPECT_EQ(out, (Md(2, 1) << 3, 4).finished());

  ParamStore<double> ps3;
  const ModelNode both = identity_bag(ps3, Aggregation::kMeanMax);
  out = forward(both, ps3, two_instance_bag()).output;
  EXPECT_EQ(out, (Md(4, 1) << 2, 3, 3, 4).finished());
}

TEST(Forward, EmptyBagUsesEmptyVector) {
  ParamStore<double> ps;
  const ModelNode bag = identity_bag(ps, Aggregation::kMeanMax);
  const DataNode data = make_bag(make_dense(Matrixf::Zero(2, 0)), {{0, 0}});
  EXPECT_EQ(forward(bag, ps, data).output, Md::Constant(4, 1, 7.0));
}

TEST(Forward, ImputationReplacesMissingColumns) {
  ParamStore<double> ps;
  const ModelNode leaf = identity_leaf(ps, 2);
  ps[0] << 5, 6;
  Matrixf x(2, 2);
  x << 1, 0, 2, 0;
  const Md out = forward(leaf, ps, make_dense(x, {false, true})).output;
  EXPECT_EQ(out, (Md(2, 2) << 1, 5, 2, 6).finished());
}

TEST(Forward, ShapeMismatchNamesPath) {
  ParamStore<float> ps;
  const ModelNode m = reflect_in_model(make_product({{"a", make_dense(Matrixf::Zero(3, 1))}}), {}, ps);
  try {
    forward(m, ps, make_product({{"a", make_dense(Matrixf::Zero(4, 1))}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("$.a"), std::string::npos) << e.what();
  }
}

TEST(Backward, LinearLayerGradient) {
  ParamStore<double> ps;
  const ModelNode leaf = identity_leaf(ps, 2);
  Matrixf x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  const DataNode data = make_dense(x);
  auto fwd = forward(leaf, ps, data);
  Md up(2, 3);
  up << 0.5, -1, 2, 1, 0, -3;
  const Gradients<double> g = backward(fwd.tape, up);
  EXPECT_TRUE(g[*ps.find("leaf.weights")].isApprox(up * x.cast<double>().transpose()));
  EXPECT_TRUE(g[*ps.find("leaf.bias")].isApprox(up.rowwise().sum()));
}

TEST(Backward, MeanDistributesEvenly) {
  ParamStore<double> ps;
  const ModelNode bag = identity_bag(ps, Aggregation::kMean);
  const DataNode data = two_instance_bag();
  auto fwd = forward(bag, ps, data);
  const Md up = (Md(2, 1) << 1, -2).finished();
  const Gradients<double> g = backward(fwd.tape, up);
  // Each member receives up/2, so dW_leaf = (up/2)(x1 + x2)ᵀ.
  const Md x_sum = (Md(2, 1) << 4, 6).finished();
  EXPECT_TRUE(g[*ps.find("leaf.weights")].isApprox(0.5 * up * x_sum.transpose()));
  EXPECT_TRUE(g[*ps.find("leaf.bias")].isApprox(up));
}

TEST(Backward, MaxRoutesToFirstArgmax) {
  ParamStore<double> ps;
  const ModelNode bag = identity_bag(ps, Aggregation::kMax);
  Matrixf x(2, 3);
  x << 5, 5, 1, 0, 2, 2;  // row 0 ties at instances 0 and 1, row 1 at 1 and 2
  const DataNode data = make_bag(make_dense(x), {{0, 3}});
  auto fwd = forward(bag, ps, data);
  const Gradients<double> g = backward(fwd.tape, Md(Md::Ones(2, 1)));
  // Routed instances: 0 for row 0 and 1 for row 1; dW(r, c) = x(c, routed_r).
  Md expected(2, 2);
  expected << 5, 0, 5, 2;
  EXPECT_EQ(g[*ps.find("leaf.weights")], expected);
}

TEST(Backward, GradientLocality) {
  Rng rng(1);
  ParamStore<double> ps;
  const ModelNode bag = identity_bag(ps, Aggregation::kMeanMax);
  randomize(ps, rng);
  const std::size_t imp = *ps.find("leaf.imputation");
  const std::size_t empty = *ps.find("bag.empty");

  Matrixf x = Matrixf::Random(2, 3);
  const DataNode full = make_bag(make_dense(x), {{0, 2}, {2, 3}});
  auto clean = forward(bag, ps, full);
  Gradients<double> g = backward(clean.tape, Md(Md::Ones(4, 2)));
  EXPECT_EQ(g[imp].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g[empty].cwiseAbs().maxCoeff(), 0.0);

  const DataNode sparse =
      make_bag(make_dense(x, {false, true, false}), {{0, 2}, {2, 2}, {2, 3}});
  auto holes = forward(bag, ps, sparse);
  g = backward(holes.tape, Md(Md::Ones(4, 3)));
  EXPECT_GT(g[imp].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(g[empty].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Predict, EmptyBatchAndDuplicates) {
  Rng rng(8);
  const auto c = testing::random_case(rng, 4);
  const Classifier clf = make_classifier(c.data, 3, testing::small_model_config(2));
  const std::vector<std::size_t> none;
  EXPECT_EQ(predict(clf, slice(c.data, none)).cols(), 0);
  const std::vector<std::size_t> dup{1, 1};
  const Matrix<float> logits = predict(clf, slice(c.data, dup));
  EXPECT_EQ(logits.rows(), 3);
  EXPECT_EQ(logits.col(0), logits.col(1));
}

TEST(GradCheck, LinearQuadraticIsExact) {
  Rng rng(4);
  ParamStore<double> ps;
  const ModelNode leaf = identity_leaf(ps, 3);
  randomize(ps, rng);
  Matrixf x = Matrixf::Random(3, 5);
  const LossFn<double> quadratic = [](const Md& out, Md* grad) {
    if (grad) *grad = out;
    return 0.5 * out.squaredNorm();
  };
  const auto r = grad_check(leaf, nullptr, ps, make_dense(x), quadratic);
  EXPECT_LT(r.max_relative_error, 1e-5);
  EXPECT_GT(r.checked, 0u);
}

TEST(GradCheck, ZeroParametersWarns) {
  ParamStore<double> ps;
  const ModelNode leaf = identity_leaf(ps, 2);
  GradCheckOptions options;
  options.max_params = 0;
  const LossFn<double> sum = [](const Md& out, Md* grad) {
    if (grad) *grad = Md::Ones(out.rows(), out.cols());
    return out.sum();
  };
  const auto r = grad_check(leaf, nullptr, ps, make_dense(Matrixf::Ones(2, 1)), sum, options);
  EXPECT_EQ(r.max_relative_error, 0.0);
  EXPECT_FALSE(r.warnings.empty());
}

// Properties over random extractor-produced data.

class ModelProperties : public ::testing::TestWithParam<int> {};

template <typename Real>
LossFn<Real> cross_entropy_loss(std::vector<std::size_t> labels) {
  return [labels](const Matrix<Real>& logits, Matrix<Real>* grad) {
    auto r = cross_entropy<Real>(logits, labels);
    if (grad) *grad = r.grad;
    return r.loss;
  };
}

TEST_P(ModelProperties, GradientsMatchFiniteDifferences) {
  Rng rng(static_cast<std::uint64_t>(GetParam()));
  const auto c = testing::random_case(rng, 1 + testing::uniform(rng, 0, 3));
  const Classifier clf = make_classifier(c.data, 3, testing::small_model_config(GetParam()));
  // Small random values break the zero-bias ties of a fresh model without
  // saturating the softmax.
  ParamStore<double> ps = clf.params.cast<double>();
  randomize(ps, rng, 0.1);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < sample_count(c.data); ++i) labels.push_back(testing::uniform(rng, 0, 2));
  GradCheckOptions options;
  options.seed = static_cast<std::uint64_t>(GetParam());

  const auto r64 = grad_check(clf.root, &clf.head, ps, c.data, cross_entropy_loss<double>(labels), options);
  EXPECT_LE(r64.max_relative_error, 1e-4) << r64.worst_parameter;
  EXPECT_GT(r64.checked, 0u);

  // Float rounding in the loss (~1e-7 relative) swamps a 1e-3 step.
  options.epsilon = 1e-2;
  const ParamStore<float> ps32 = ps.cast<float>();
  const auto r32 = grad_check(clf.root, &clf.head, ps32, c.data, cross_entropy_loss<float>(labels), options);
  EXPECT_LE(r32.max_relative_error, 2e-2) << r32.worst_parameter;
}

TEST_P(ModelProperties, PermutationInvariance) {
  Rng rng(100 + static_cast<std::uint64_t>(GetParam()));
  const auto c = testing::random_case(rng, 1 + testing::uniform(rng, 0, 6));
  const Classifier clf = make_classifier(c.data, 2, testing::small_model_config(GetParam()));
  const Matrix<float> a = forward(clf.root, clf.params, c.data).output;
  const Matrix<float> b = forward(clf.root, clf.params, testing::permute_bags(c.data, rng)).output;
  EXPECT_LE(testing::max_abs_diff(a, b), 1e-5);
}

TEST_P(ModelProperties, BatchEqualsStackedSingles) {
  Rng rng(200 + static_cast<std::uint64_t>(GetParam()));
  const auto c = testing::random_case(rng, 1 + testing::uniform(rng, 0, 6));
  const Classifier clf = make_classifier(c.data, 2, testing::small_model_config(GetParam()));
  const Matrix<float> batch = forward(clf.root, clf.params, c.data).output;
  Matrix<float> stacked(batch.rows(), static_cast<Eigen::Index>(c.documents.size()));
  for (std::size_t i = 0; i < c.documents.size(); ++i) {
    stacked.col(static_cast<Eigen::Index>(i)) =
        forward(clf.root, clf.params, extract(c.extractor, c.documents[i])).output.col(0);
  }
  EXPECT_LE(testing::max_abs_diff(batch, stacked), 1e-5);
}

TEST_P(ModelProperties, MaxIgnoresSmallNonArgmaxPerturbation) {
  Rng rng(300 + static_cast<std::uint64_t>(GetParam()));
  ParamStore<double> ps;
  const ModelNode bag = identity_bag(ps, Aggregation::kMax);
  Matrixf x = Matrixf::Random(2, 4);
  x(0, 1) = 2.0f;  // argmax of row 0
  x(1, 1) = 2.0f;  // and of row 1
  const Md before = forward(bag, ps, make_bag(make_dense(x), {{0, 4}})).output;
  const Eigen::Index victim = std::array<Eigen::Index, 3>{0, 2, 3}[testing::uniform(rng, 0, 2)];
  // Matrixf::Random lies in [-1, 1], so half the margin keeps the argmax.
  for (Eigen::Index r = 0; r < 2; ++r) x(r, victim) += 0.5f * (2.0f - x(r, victim)) * 0.5f;
  const Md after = forward(bag, ps, make_bag(make_dense(x), {{0, 4}})).output;
  EXPECT_EQ(before, after);
}

INSTANTIATE_TEST_SUITE_P(Random, ModelProperties, ::testing::Range(0, 20));

}  // namespace
}  // namespace hmil
