#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hmil/bundle.hpp"
#include "hmil/extractor.hpp"
#include "hmil/model.hpp"

namespace hmil {

template <typename Real>
struct LossResult {
  double loss = 0.0;    // mean over samples
  Matrix<Real> grad;    // d loss / d logits
};

/// Mean softmax cross-entropy. Throws EmptyBatch on zero samples.
template <typename Real>
LossResult<Real> cross_entropy(const Matrix<Real>& logits, std::span<const std::size_t> labels);

/// Column-wise softmax.
Matrix<double> softmax(const Matrix<float>& logits);

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Real>
struct OptimizerState {
  std::uint64_t step = 0;
  ParamStore<Real> first;   // Adam first moments
  ParamStore<Real> second;  // Adam second moments
};

/// One update in place. State is initialized lazily on the first step.
template <typename Real>
void optimizer_step(ParamStore<Real>& params, const Gradients<Real>& grads,
                    OptimizerState<Real>& state, const OptimizerConfig& config);

std::vector<std::uint8_t> save_optimizer_state(const OptimizerState<float>& state);
OptimizerState<float> load_optimizer_state(std::span<const std::uint8_t> bytes);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  bool shuffle = true;
  double validation_fraction = 0.2;
  std::size_t patience = 10;
  std::size_t threads = 1;
  ModelConfig model;
};

struct LabeledCorpus {
  std::vector<Json> documents;
  std::vector<std::string> labels;
  /// Class names in order of first occurrence.
  std::vector<std::string> classes;

  void add(Json document, std::string label);
  std::size_t class_index(const std::string& label) const;

 private:
  std::map<std::string, std::size_t> index_;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double wall_time_seconds = 0.0;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;

  std::string to_csv() const;
  Json to_json() const;
};

/// Seeded stratified split: per class, round(fraction × count) samples go to
/// validation. Returns sorted (train, validation) index lists.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<std::size_t>& labels, std::size_t classes, double fraction,
    std::uint64_t seed);

/// Returns the bundle holding parameters of the best validation epoch.
std::pair<Bundle, TrainReport> train(const LabeledCorpus& corpus, const Extractor& extractor,
                                     const TrainConfig& config);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t count = 0;
};

/// Argmax with ties broken towards the lowest class index.
std::vector<std::size_t> argmax_columns(const Matrix<float>& logits);

EvalResult evaluate(const Bundle& bundle, std::span<const Json> documents,
                    std::span<const std::string> labels);

/// Per-class probabilities, classes × documents.
Matrix<double> predict_proba(const Bundle& bundle, std::span<const Json> documents);

}  // namespace hmil
