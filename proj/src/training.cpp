#include "hmil/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "hmil/error.hpp"

namespace hmil {

template <typename Real>
LossResult<Real> cross_entropy(const Matrix<Real>& logits, std::span<const std::size_t> labels) {
  const Eigen::Index n = logits.cols();
  if (n == 0) throw Error(ErrorKind::kEmptyBatch, "cross-entropy over zero samples");
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw Error(ErrorKind::kShapeMismatch, "logits have " + std::to_string(n) +
                                               " columns but " + std::to_string(labels.size()) +
                                               " labels were given");
  }
  LossResult<Real> out;
  out.grad.resize(logits.rows(), n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const std::size_t y = labels[j];
    if (y >= static_cast<std::size_t>(logits.rows())) {
      throw Error(ErrorKind::kIndexOutOfRange, "label index " + std::to_string(y) +
                                                   " out of range for " +
                                                   std::to_string(logits.rows()) + " classes");
    }
    const auto col = logits.col(j).template cast<double>();
    const double m = col.maxCoeff();
    const Eigen::VectorXd shifted = col.array() - m;
    const double log_z = std::log(shifted.array().exp().sum());
    total += log_z - shifted(static_cast<Eigen::Index>(y));
    Eigen::VectorXd p = (shifted.array() - log_z).exp();
    p(static_cast<Eigen::Index>(y)) -= 1.0;
    out.grad.col(j) = (p / static_cast<double>(n)).template cast<Real>();
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

template LossResult<float> cross_entropy(const Matrix<float>&, std::span<const std::size_t>);
template LossResult<double> cross_entropy(const Matrix<double>&, std::span<const std::size_t>);

Matrix<double> softmax(const Matrix<float>& logits) {
  Matrix<double> out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const Eigen::VectorXd col = logits.col(j).cast<double>();
    const Eigen::VectorXd e = (col.array() - col.maxCoeff()).exp();
    out.col(j) = e / e.sum();
  }
  return out;
}

template <typename Real>
void optimizer_step(ParamStore<Real>& params, const Gradients<Real>& grads,
                    OptimizerState<Real>& state, const OptimizerConfig& config) {
  if (grads.size() != params.size()) {
    throw Error(ErrorKind::kShapeMismatch, "gradient store has " + std::to_string(grads.size()) +
                                               " tensors, parameters have " +
                                               std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols()) {
      throw Error(ErrorKind::kShapeMismatch, "gradient for " + params.name(i) +
                                                 " has the wrong shape");
    }
  }
  const Real lr = static_cast<Real>(config.lr);
  if (config.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
    ++state.step;
    return;
  }
  if (state.first.size() != params.size()) {
    state.first = params.zeros_like();
    state.second = params.zeros_like();
    state.step = 0;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Real b1 = static_cast<Real>(config.beta1);
  const Real b2 = static_cast<Real>(config.beta2);
  const Real c1 = static_cast<Real>(1.0 - std::pow(config.beta1, t));
  const Real c2 = static_cast<Real>(1.0 - std::pow(config.beta2, t));
  const Real eps = static_cast<Real>(config.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first[i];
    auto& v = state.second[i];
    m = b1 * m + (Real(1) - b1) * grads[i];
    v = b2 * v + (Real(1) - b2) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

template void optimizer_step(ParamStore<float>&, const Gradients<float>&, OptimizerState<float>&,
                             const OptimizerConfig&);
template void optimizer_step(ParamStore<double>&, const Gradients<double>&,
                             OptimizerState<double>&, const OptimizerConfig&);

namespace {

Json store_to_json(const ParamStore<float>& store) {
  Json out = Json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    std::vector<float> values(store[i].data(), store[i].data() + store[i].size());
    out.push_back(Json{{"name", store.name(i)},
                       {"rows", store[i].rows()},
                       {"cols", store[i].cols()},
                       {"values", values}});
  }
  return out;
}

ParamStore<float> store_from_json(const Json& j) {
  ParamStore<float> store;
  for (const Json& t : j) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto values = t.at("values").get<std::vector<float>>();
    if (values.size() != static_cast<std::size_t>(rows * cols)) {
      throw Error(ErrorKind::kFormat, "optimizer tensor size mismatch");
    }
    store.add(t.at("name").get<std::string>(),
              Eigen::Map<const Matrix<float>>(values.data(), rows, cols));
  }
  return store;
}

}  // namespace

std::vector<std::uint8_t> save_optimizer_state(const OptimizerState<float>& state) {
  const Json j{{"format", "hmil-optimizer/1"},
               {"step", state.step},
               {"first", store_to_json(state.first)},
               {"second", store_to_json(state.second)}};
  return Json::to_cbor(j);
}

OptimizerState<float> load_optimizer_state(std::span<const std::uint8_t> bytes) {
  try {
    const Json j = Json::from_cbor(bytes.begin(), bytes.end());
    if (j.value("format", "") != "hmil-optimizer/1") {
      throw Error(ErrorKind::kFormat, "not an hmil-optimizer/1 state");
    }
    OptimizerState<float> state;
    state.step = j.at("step").get<std::uint64_t>();
    state.first = store_from_json(j.at("first"));
    state.second = store_from_json(j.at("second"));
    return state;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("bad optimizer state: ") + e.what());
  }
}

void LabeledCorpus::add(Json document, std::string label) {
  auto [it, inserted] = index_.try_emplace(label, classes.size());
  if (inserted) classes.push_back(label);
  documents.push_back(std::move(document));
  labels.push_back(std::move(label));
}

std::size_t LabeledCorpus::class_index(const std::string& label) const {
  const auto it = index_.find(label);
  if (it == index_.end()) throw Error(ErrorKind::kUnknownLabel, "unknown label '" + label + "'");
  return it->second;
}

std::string TrainReport::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  out << std::setprecision(9);
  for (const EpochStats& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_loss << ','
        << e.val_accuracy << '\n';
  }
  return out.str();
}

Json TrainReport::to_json() const {
  Json rows = Json::array();
  for (const EpochStats& e : epochs) {
    rows.push_back(Json{{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"train_acc", e.train_accuracy},
                        {"val_loss", e.val_loss},
                        {"val_acc", e.val_accuracy}});
  }
  return Json{{"epochs", rows},
              {"best_epoch", best_epoch},
              {"wall_time_seconds", wall_time_seconds},
              {"train_size", train_size},
              {"validation_size", validation_size}};
}

namespace {

template <typename T>
void fisher_yates(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<std::size_t>& labels, std::size_t classes, double fraction,
    std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "validation fraction must lie in [0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw Error(ErrorKind::kIndexOutOfRange, "label index out of range");
    }
    by_class[labels[i]].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, val;
  for (auto& members : by_class) {
    fisher_yates(members, rng);
    const auto n_val = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(members.size())));
    val.insert(val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {std::move(train), std::move(val)};
}

std::vector<std::size_t> argmax_columns(const Matrix<float>& logits) {
  std::vector<std::size_t> out(static_cast<std::size_t>(logits.cols()), 0);
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.rows(); ++i) {
      if (logits(i, j) > logits(best, j)) best = i;
    }
    out[static_cast<std::size_t>(j)] = static_cast<std::size_t>(best);
  }
  return out;
}

namespace {

// Per-document extraction fanned out over `threads`; errors carry the index.
DataNode extract_all(const Extractor& extractor, std::span<const Json> docs,
                     std::size_t threads) {
  if (docs.empty()) return extract_batch(extractor, docs);
  std::vector<std::optional<DataNode>> parts(docs.size());
  std::vector<std::exception_ptr> errors(docs.size());
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      try {
        parts[i] = extract(extractor, docs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, docs.size());
  if (threads == 1) {
    work(0, docs.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (docs.size() + threads - 1) / threads;
    for (std::size_t lo = 0; lo < docs.size(); lo += chunk) {
      pool.emplace_back(work, lo, std::min(docs.size(), lo + chunk));
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.kind(), "document " + std::to_string(i) + ": " + e.what());
    }
  }
  std::vector<DataNode> nodes;
  nodes.reserve(parts.size());
  for (auto& p : parts) nodes.push_back(std::move(*p));
  return concat_samples(nodes);
}

struct Scores {
  double loss = 0.0;
  double accuracy = 0.0;
};

Scores score(const Classifier& classifier, const DataNode& data,
             std::span<const std::size_t> labels) {
  if (labels.empty()) return {};
  const Matrix<float> logits = predict(classifier, data);
  const auto ce = cross_entropy<float>(logits, labels);
  const auto predicted = argmax_columns(logits);
  std::size_t correct = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) correct += predicted[j] == labels[j];
  return {ce.loss, static_cast<double>(correct) / static_cast<double>(labels.size())};
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace

std::pair<Bundle, TrainReport> train(const LabeledCorpus& corpus, const Extractor& extractor,
                                     const TrainConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  if (corpus.documents.empty()) throw Error(ErrorKind::kInvalidArgument, "empty corpus");
  if (corpus.documents.size() != corpus.labels.size()) {
    throw Error(ErrorKind::kShapeMismatch, "documents and labels differ in length");
  }
  if (corpus.classes.size() < 2) {
    throw Error(ErrorKind::kSingleClass,
                "training needs at least two classes, found " +
                    std::to_string(corpus.classes.size()));
  }
  if (config.batch_size == 0) throw Error(ErrorKind::kInvalidArgument, "batch size must be > 0");

  std::vector<std::size_t> labels;
  labels.reserve(corpus.labels.size());
  for (const auto& l : corpus.labels) labels.push_back(corpus.class_index(l));
  const auto [train_idx, val_idx] =
      stratified_split(labels, corpus.classes.size(), config.validation_fraction, config.seed);
  if (train_idx.empty()) throw Error(ErrorKind::kInvalidArgument, "training split is empty");

  const DataNode all = extract_all(extractor, corpus.documents, config.threads);
  const DataNode train_data = slice(all, train_idx);
  const DataNode val_data = slice(all, val_idx);
  const auto train_labels = gather(labels, train_idx);
  const auto val_labels = gather(labels, val_idx);

  ModelConfig model_config = config.model;
  model_config.seed = config.seed;
  Bundle bundle;
  bundle.extractor = extractor;
  bundle.classes = corpus.classes;
  bundle.model_config = model_config;
  bundle.classifier = make_classifier(train_data, corpus.classes.size(), model_config);
  Classifier& clf = bundle.classifier;

  TrainReport report;
  report.train_size = train_idx.size();
  report.validation_size = val_idx.size();

  OptimizerState<float> state;
  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(train_idx.size());
  ParamStore<float> best_params = clf.params;
  double best_score = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (config.shuffle) fisher_yates(order, rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + config.batch_size);
      const std::span<const std::size_t> batch_idx(order.data() + lo, hi - lo);
      const DataNode batch = slice(train_data, batch_idx);
      const auto batch_labels = gather(train_labels, batch_idx);

      auto fwd = forward(clf.root, clf.params, batch);
      ChainTape<float> head_tape;
      const Matrix<float> logits = apply_chain(clf.head.layers, clf.params, fwd.output, &head_tape);
      const auto ce = cross_entropy<float>(logits, batch_labels);
      const auto predicted = argmax_columns(logits);
      for (std::size_t j = 0; j < batch_labels.size(); ++j) correct += predicted[j] == batch_labels[j];
      loss_sum += ce.loss * static_cast<double>(batch_labels.size());

      Gradients<float> grads = clf.params.zeros_like();
      Matrix<float> dembed = backward_chain(clf.head.layers, clf.params, head_tape, ce.grad, grads);
      backward_into(fwd.tape, dembed, grads);
      optimizer_step(clf.params, grads, state, config.optimizer);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    const Scores val = score(clf, val_data, val_labels);
    stats.val_loss = val.loss;
    stats.val_accuracy = val.accuracy;
    report.epochs.push_back(stats);

    // Without a validation split, selection falls back to training accuracy.
    const double selection = val_labels.empty() ? stats.train_accuracy : stats.val_accuracy;
    if (selection > best_score) {
      best_score = selection;
      best_params = clf.params;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  clf.params = std::move(best_params);
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(bundle), std::move(report)};
}

EvalResult evaluate(const Bundle& bundle, std::span<const Json> documents,
                    std::span<const std::string> labels) {
  if (documents.size() != labels.size()) {
    throw Error(ErrorKind::kShapeMismatch, "documents and labels differ in length");
  }
  const std::size_t k = bundle.classes.size();
  std::vector<std::size_t> truth;
  truth.reserve(labels.size());
  for (const auto& l : labels) {
    const auto it = std::find(bundle.classes.begin(), bundle.classes.end(), l);
    if (it == bundle.classes.end()) {
      throw Error(ErrorKind::kUnknownLabel, "label '" + l + "' is not a class of the model");
    }
    truth.push_back(static_cast<std::size_t>(it - bundle.classes.begin()));
  }
  EvalResult result;
  result.count = documents.size();
  result.confusion.assign(k, std::vector<std::size_t>(k, 0));
  result.precision.assign(k, 0.0);
  result.recall.assign(k, 0.0);
  if (documents.empty()) return result;

  const DataNode data = extract_batch(bundle.extractor, documents);
  const auto predicted = argmax_columns(predict(bundle.classifier, data));
  std::size_t correct = 0;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    ++result.confusion[truth[j]][predicted[j]];
    correct += truth[j] == predicted[j];
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t row = 0, column = 0;
    for (std::size_t o = 0; o < k; ++o) {
      row += result.confusion[c][o];
      column += result.confusion[o][c];
    }
    const double hit = static_cast<double>(result.confusion[c][c]);
    result.precision[c] = column ? hit / static_cast<double>(column) : 0.0;
    result.recall[c] = row ? hit / static_cast<double>(row) : 0.0;
  }
  return result;
}

Matrix<double> predict_proba(const Bundle& bundle, std::span<const Json> documents) {
  if (documents.empty()) return Matrix<double>(bundle.classes.size(), 0);
  return softmax(predict(bundle.classifier, extract_batch(bundle.extractor, documents)));
}

}  // namespace hmil
