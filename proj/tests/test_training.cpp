#include <gtest/gtest.h>

#include <cmath>

#include "hmil/error.hpp"
#include "hmil/training.hpp"
#include "support.hpp"

namespace hmil {
namespace {

using testing::Rng;
using Md = Matrix<double>;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kInvalidArgument;
}

LabeledCorpus separable(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  LabeledCorpus corpus;
  for (auto& [doc, label] : testing::separable_corpus(rng, n)) corpus.add(doc, label);
  return corpus;
}

Extractor auto_extractor(const LabeledCorpus& corpus) {
  return suggest_extractor(schema_of(corpus.documents));
}

TEST(CrossEntropy, UniformIsLn2) {
  const std::vector<std::size_t> y{0};
  const auto r = cross_entropy<double>(Md::Zero(2, 1), y);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(r.grad(0, 0), -0.5, 1e-12);
  EXPECT_NEAR(r.grad(1, 0), 0.5, 1e-12);
}

TEST(CrossEntropy, LargeLogitsAreStable) {
  const std::vector<std::size_t> y{0};
  const auto r = cross_entropy<float>((Matrix<float>(2, 1) << 30, -30).finished(), y);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  const auto wrong = cross_entropy<float>((Matrix<float>(2, 1) << -1000, 1000).finished(), y);
  EXPECT_NEAR(wrong.loss, 2000.0, 1e-9);
  EXPECT_TRUE(wrong.grad.allFinite());
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  std::normal_distribution<double> normal(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    Md logits(4, 5);
    for (Eigen::Index k = 0; k < logits.size(); ++k) logits.data()[k] = normal(rng);
    std::vector<std::size_t> y;
    for (int j = 0; j < 5; ++j) y.push_back(testing::uniform(rng, 0, 3));
    const auto r = cross_entropy<double>(logits, y);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < logits.size(); ++k) {
      Md plus = logits, minus = logits;
      plus.data()[k] += h;
      minus.data()[k] -= h;
      const double numeric =
          (cross_entropy<double>(plus, y).loss - cross_entropy<double>(minus, y).loss) / (2 * h);
      EXPECT_NEAR(r.grad.data()[k], numeric, 1e-6);
    }
  }
}

TEST(CrossEntropy, EmptyBatch) {
  EXPECT_EQ(kind_of([] { cross_entropy<float>(Matrix<float>(2, 0), {}); }),
            ErrorKind::kEmptyBatch);
}

ParamStore<double> scalar_store(double v) {
  ParamStore<double> ps;
  ps.add("theta", Md::Constant(1, 1, v));
  return ps;
}

TEST(Optimizer, SgdStep) {
  ParamStore<double> ps = scalar_store(1.0);
  OptimizerState<double> state;
  OptimizerConfig config{OptimizerKind::kSgd, 0.1};
  optimizer_step(ps, scalar_store(2.0), state, config);
  EXPECT_NEAR(ps[0](0, 0), 0.8, 1e-15);
  optimizer_step(ps, scalar_store(0.0), state, config);
  EXPECT_NEAR(ps[0](0, 0), 0.8, 1e-15);
}

TEST(Optimizer, AdamFirstStepIsLr) {
  ParamStore<double> ps = scalar_store(0.0);
  OptimizerState<double> state;
  OptimizerConfig config;
  optimizer_step(ps, scalar_store(1.0), state, config);
  // m = 0.1, v = 0.001; bias correction gives m̂ = v̂ = 1.
  const double expected = -config.lr * 1.0 / (1.0 + config.eps);
  EXPECT_NEAR(ps[0](0, 0), expected, 1e-15);
  EXPECT_NEAR(state.first[0](0, 0), 0.1, 1e-15);
  EXPECT_NEAR(state.second[0](0, 0), 0.001, 1e-15);
}

TEST(Optimizer, AdamZeroGradientChangesOnlyState) {
  ParamStore<double> ps = scalar_store(3.0);
  OptimizerState<double> state;
  optimizer_step(ps, scalar_store(0.0), state, OptimizerConfig{});
  EXPECT_EQ(ps[0](0, 0), 3.0);
  EXPECT_EQ(state.step, 1u);
}

TEST(Optimizer, ShapeMismatch) {
  ParamStore<double> ps = scalar_store(1.0);
  ParamStore<double> grads;
  grads.add("theta", Md::Zero(2, 1));
  OptimizerState<double> state;
  EXPECT_EQ(kind_of([&] { optimizer_step(ps, grads, state, OptimizerConfig{}); }),
            ErrorKind::kShapeMismatch);
}

TEST(Optimizer, StateRoundTrip) {
  ParamStore<float> ps;
  ps.add("a", Matrix<float>::Random(3, 2));
  ps.add("b", Matrix<float>::Random(4, 1));
  OptimizerState<float> state;
  for (int i = 0; i < 3; ++i) {
    ParamStore<float> g = ps.zeros_like();
    g[0].setRandom();
    g[1].setRandom();
    optimizer_step(ps, g, state, OptimizerConfig{});
  }
  const OptimizerState<float> back = load_optimizer_state(save_optimizer_state(state));
  EXPECT_EQ(back.step, state.step);
  ASSERT_EQ(back.first.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.first[i], state.first[i]);
    EXPECT_EQ(back.second[i], state.second[i]);
    EXPECT_EQ(back.first.name(i), state.first.name(i));
  }
}

TEST(Corpus, ClassesInFirstOccurrenceOrder) {
  LabeledCorpus c;
  c.add(1, "z");
  c.add(2, "a");
  c.add(3, "z");
  EXPECT_EQ(c.classes, (std::vector<std::string>{"z", "a"}));
  EXPECT_EQ(c.class_index("a"), 1u);
  EXPECT_EQ(kind_of([&] { c.class_index("q"); }), ErrorKind::kUnknownLabel);
}

TEST(StratifiedSplit, PreservesProportions) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = testing::uniform(rng, 2, 5);
    std::vector<std::size_t> labels(testing::uniform(rng, 1, 200));
    for (auto& l : labels) l = testing::uniform(rng, 0, classes - 1);
    const double fraction = static_cast<double>(testing::uniform(rng, 0, 9)) / 10.0;
    const auto [train, val] = stratified_split(labels, classes, fraction, rng());
    EXPECT_EQ(train.size() + val.size(), labels.size());
    std::vector<bool> seen(labels.size(), false);
    for (auto i : train) seen[i] = true;
    for (auto i : val) {
      EXPECT_FALSE(seen[i]);
      seen[i] = true;
    }
    for (std::size_t c = 0; c < classes; ++c) {
      const double total = static_cast<double>(std::count(labels.begin(), labels.end(), c));
      const double in_val = static_cast<double>(
          std::count_if(val.begin(), val.end(), [&](std::size_t i) { return labels[i] == c; }));
      EXPECT_LE(std::abs(in_val - fraction * total), 1.0);
    }
  }
}

TEST(Train, SingleClassFails) {
  LabeledCorpus c;
  c.add(Json{{"a", 1}}, "only");
  c.add(Json{{"a", 2}}, "only");
  EXPECT_EQ(kind_of([&] { train(c, auto_extractor(c), TrainConfig{}); }), ErrorKind::kSingleClass);
}

TEST(Train, EmptyCorpusFails) {
  EXPECT_EQ(kind_of([] { train(LabeledCorpus{}, Extractor{NumericExtractor{}}, TrainConfig{}); }),
            ErrorKind::kInvalidArgument);
}

TEST(Train, SeparableCorpusLearnsAndLossDecreases) {
  const LabeledCorpus corpus = separable(1, 600);
  TrainConfig config;
  config.epochs = 50;
  config.patience = 50;
  config.seed = 5;
  const auto [bundle, report] = train(corpus, auto_extractor(corpus), config);
  ASSERT_GE(report.epochs.size(), 20u);
  EXPECT_LT(report.epochs[19].train_loss, report.epochs[0].train_loss);
  const auto& best = report.epochs.at(report.best_epoch - 1);
  EXPECT_GE(best.val_accuracy, 0.95);
  for (std::size_t i = 0; i < report.epochs.size(); ++i) EXPECT_EQ(report.epochs[i].epoch, i + 1);
  EXPECT_EQ(report.train_size + report.validation_size, corpus.documents.size());
}

TEST(Train, SameSeedIsDeterministic) {
  const LabeledCorpus corpus = separable(2, 200);
  TrainConfig config;
  config.epochs = 5;
  config.seed = 11;
  const Extractor e = auto_extractor(corpus);
  const auto [b1, r1] = train(corpus, e, config);
  const auto [b2, r2] = train(corpus, e, config);
  EXPECT_EQ(r1.epochs, r2.epochs);
  EXPECT_EQ(r1.to_csv(), r2.to_csv());
  EXPECT_EQ(save_bundle(b1), save_bundle(b2));
}

TEST(Train, EarlyStoppingKeepsBestEpoch) {
  const LabeledCorpus corpus = separable(3, 200);
  TrainConfig config;
  config.epochs = 200;
  config.patience = 3;
  const auto [bundle, report] = train(corpus, auto_extractor(corpus), config);
  EXPECT_LT(report.epochs.size(), 200u);
  EXPECT_EQ(report.epochs.size(), report.best_epoch + config.patience);
  for (const auto& e : report.epochs) {
    EXPECT_LE(e.val_accuracy, report.epochs[report.best_epoch - 1].val_accuracy);
  }
}

TEST(Evaluate, MemorizedTinySetIsPerfect) {
  LabeledCorpus corpus;
  for (int i = 0; i < 10; ++i) corpus.add(Json{{"color", i % 2 ? "red" : "blue"}, {"n", i}}, i % 2 ? "odd" : "even");
  TrainConfig config;
  config.validation_fraction = 0.0;
  config.epochs = 300;
  config.patience = 300;
  config.optimizer.lr = 1e-2;
  const auto [bundle, report] = train(corpus, auto_extractor(corpus), config);
  const EvalResult r = evaluate(bundle, corpus.documents, corpus.labels);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{5, 0}, {0, 5}}));
  EXPECT_EQ(r.precision, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(r.recall, (std::vector<double>{1.0, 1.0}));
}

TEST(Evaluate, ConstantPredictorOnBalancedSet) {
  const LabeledCorpus corpus = separable(4, 40);
  TrainConfig config;
  config.epochs = 1;
  auto [bundle, report] = train(corpus, auto_extractor(corpus), config);
  // Zero the head weights and favour class 0 through the bias.
  auto& head = bundle.classifier.head.layers.back();
  bundle.classifier.params[head.weights].setZero();
  bundle.classifier.params[head.bias].setZero();
  bundle.classifier.params[head.bias](0, 0) = 1.0f;
  std::vector<Json> docs;
  std::vector<std::string> labels;
  for (int i = 0; i < 20; ++i) {
    docs.push_back(corpus.documents[static_cast<std::size_t>(i)]);
    labels.push_back(bundle.classes[static_cast<std::size_t>(i % 2)]);
  }
  const EvalResult r = evaluate(bundle, docs, labels);
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.recall[0], 1.0);
  EXPECT_EQ(r.recall[1], 0.0);
}

TEST(Evaluate, UnknownLabelFails) {
  const LabeledCorpus corpus = separable(5, 40);
  TrainConfig config;
  config.epochs = 1;
  const auto [bundle, report] = train(corpus, auto_extractor(corpus), config);
  const std::vector<Json> docs{corpus.documents[0]};
  const std::vector<std::string> labels{"mystery"};
  EXPECT_EQ(kind_of([&] { evaluate(bundle, docs, labels); }), ErrorKind::kUnknownLabel);
}

TEST(Predict, ProbabilitiesSumToOne) {
  const LabeledCorpus corpus = separable(6, 60);
  TrainConfig config;
  config.epochs = 2;
  const auto [bundle, report] = train(corpus, auto_extractor(corpus), config);
  std::vector<Json> docs = corpus.documents;
  docs.push_back(Json::object());
  docs.push_back(Json("not even an object"));
  const Matrix<double> p = predict_proba(bundle, docs);
  ASSERT_EQ(p.cols(), static_cast<Eigen::Index>(docs.size()));
  for (Eigen::Index j = 0; j < p.cols(); ++j) EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-5);
}

TEST(Argmax, TiesGoToLowestIndex) {
  Matrix<float> logits(3, 2);
  logits << 1, 0, 1, 2, 0, 2;
  EXPECT_EQ(argmax_columns(logits), (std::vector<std::size_t>{0, 1}));
}

TEST(Report, CsvHeader) {
  TrainReport r;
  r.epochs.push_back({1, 0.5, 0.75, 0.25, 1.0});
  EXPECT_EQ(r.to_csv(), "epoch,train_loss,train_acc,val_loss,val_acc\n1,0.5,0.75,0.25,1\n");
  EXPECT_EQ(r.to_json().at("epochs").size(), 1u);
}

}  // namespace
}  // namespace hmil
