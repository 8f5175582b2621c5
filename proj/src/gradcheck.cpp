#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "hmil/model.hpp"

namespace hmil {

namespace {

struct Evaluation {
  double loss = 0.0;
  std::vector<std::int64_t> pattern;
};

template <typename Real>
Evaluation evaluate(const ModelNode& model, const ClassifierHead* head,
                    const ParamStore<Real>& params, const DataNode& data,
                    const LossFn<Real>& loss) {
  auto fwd = forward(model, params, data);
  Evaluation e;
  e.pattern = activation_pattern(fwd.tape);
  Matrix<Real> out = std::move(fwd.output);
  if (head) {
    ChainTape<Real> head_tape;
    out = apply_chain(head->layers, params, std::move(out), &head_tape);
    append_activation_pattern(head->layers, head_tape, e.pattern);
  }
  e.loss = loss(out, nullptr);
  return e;
}

// Floyd's algorithm: `count` distinct values from [0, n), in draw order.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  std::unordered_set<std::size_t> seen;
  for (std::size_t j = n - count; j < n; ++j) {
    const std::size_t t = static_cast<std::size_t>(rng() % (j + 1));
    const std::size_t pick = seen.count(t) ? j : t;
    seen.insert(pick);
    out.push_back(pick);
  }
  return out;
}

}  // namespace

template <typename Real>
GradCheckResult grad_check(const ModelNode& model, const ClassifierHead* head,
                           const ParamStore<Real>& params, const DataNode& data,
                           const LossFn<Real>& loss, const GradCheckOptions& options) {
  GradCheckResult result;
  ParamStore<Real> work = params;
  const std::size_t total = work.scalar_count();
  if (options.max_params == 0 || total == 0) {
    result.warnings.push_back("no parameters sampled; reporting zero error");
    return result;
  }

  // Analytic gradients.
  Gradients<Real> grads = work.zeros_like();
  {
    auto fwd = forward(model, work, data);
    if (head) {
      ChainTape<Real> head_tape;
      Matrix<Real> logits = apply_chain(head->layers, work, fwd.output, &head_tape);
      Matrix<Real> dlogits;
      loss(logits, &dlogits);
      Matrix<Real> dembed = backward_chain(head->layers, work, head_tape, dlogits, grads);
      backward_into(fwd.tape, dembed, grads);
    } else {
      Matrix<Real> dout;
      loss(fwd.output, &dout);
      backward_into(fwd.tape, dout, grads);
    }
  }

  // Flat index → tensor name, for reporting.
  std::vector<std::size_t> starts;
  {
    std::size_t at = 0;
    for (std::size_t i = 0; i < work.size(); ++i) {
      starts.push_back(at);
      at += static_cast<std::size_t>(work[i].size());
    }
  }
  auto tensor_of = [&](std::size_t flat) {
    return static_cast<std::size_t>(std::upper_bound(starts.begin(), starts.end(), flat) -
                                    starts.begin() - 1);
  };

  std::mt19937_64 rng(options.seed);
  // Draw a random order over all scalars lazily: candidates beyond the first
  // `max_params` replace parameters that sit on a kink.
  const std::size_t wanted = std::min(options.max_params, total);
  const std::size_t pool = std::min(total, wanted * 4);
  const std::vector<std::size_t> candidates = sample_indices(total, pool, rng);

  const double eps = options.epsilon;
  const std::vector<std::int64_t> base = evaluate(model, head, work, data, loss).pattern;
  for (std::size_t flat : candidates) {
    if (result.checked == wanted) break;
    const std::size_t t = tensor_of(flat);
    Real& theta = work.scalar(flat);
    const Real original = theta;
    theta = static_cast<Real>(original + eps);
    const Evaluation plus = evaluate(model, head, work, data, loss);
    theta = static_cast<Real>(original - eps);
    const Evaluation minus = evaluate(model, head, work, data, loss);
    theta = original;
    if (plus.pattern != base || minus.pattern != base) {
      ++result.skipped_kinks;
      continue;
    }

    // Use the step actually representable in Real.
    const double step_up = static_cast<double>(static_cast<Real>(original + eps)) - original;
    const double step_down = original - static_cast<double>(static_cast<Real>(original - eps));
    const double numeric = (plus.loss - minus.loss) / (step_up + step_down);

    const double analytic =
        static_cast<double>(grads[t].data()[flat - starts[t]]);
    const double err = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-4});
    ++result.checked;
    if (err > result.max_relative_error || result.worst_parameter.empty()) {
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter =
            work.name(t) + "[" + std::to_string(flat - starts[t]) + "]";
      }
    }
  }
  if (result.checked < wanted) {
    result.warnings.push_back("only " + std::to_string(result.checked) + " of " +
                              std::to_string(wanted) + " parameters checked (" +
                              std::to_string(result.skipped_kinks) + " on kinks)");
  }
  return result;
}

template GradCheckResult grad_check(const ModelNode&, const ClassifierHead*,
                                    const ParamStore<float>&, const DataNode&,
                                    const LossFn<float>&, const GradCheckOptions&);
template GradCheckResult grad_check(const ModelNode&, const ClassifierHead*,
                                    const ParamStore<double>&, const DataNode&,
                                    const LossFn<double>&, const GradCheckOptions&);

}  // namespace hmil
