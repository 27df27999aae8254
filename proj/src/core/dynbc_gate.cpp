#include "dynbc_gate.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace dynfed {

namespace {

void check_delta(double delta) {
  if (!std::isfinite(delta) || delta < 0.0) {
    throw ContractError("gate: delta must be finite and non-negative, got " + std::to_string(delta));
  }
}

}  // namespace

std::string to_string(DistanceMetric metric) {
  return metric == DistanceMetric::DiffNorm ? "diffnorm" : "dot";
}

std::string to_string(Verdict v) { return v == Verdict::Accept ? "accept" : "reject"; }

std::string to_string(TemporalVerdict v) { return v == TemporalVerdict::Commit ? "commit" : "rollback"; }

Tensor predict_probabilities(const ModelParams& model, const Tensor& inputs) {
  return sigmoid(model_forward(model, inputs));
}

Tensor prediction_of(const ModelParams& model, const ReferenceSet& refset) {
  if (refset.patches.empty()) throw ContractError("prediction_of: reference set is empty");
  return predict_probabilities(model, augmented_inputs(refset));
}

double prediction_distance(const Tensor& pred_a, const Tensor& pred_b, DistanceMetric metric) {
  if (pred_a.shape() != pred_b.shape()) {
    throw ContractError("prediction_distance: shapes " + shape_string(pred_a.shape()) + " and " +
                        shape_string(pred_b.shape()) + " differ");
  }
  if (pred_a.rank() < 1 || pred_a.dim(0) == 0) throw ContractError("prediction_distance: no prediction maps");
  const std::size_t n = pred_a.dim(0);
  const std::size_t per_map = pred_a.size() / n;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = pred_a.data() + i * per_map;
    const double* b = pred_b.data() + i * per_map;
    double acc = 0.0;
    if (metric == DistanceMetric::DiffNorm) {
      for (std::size_t j = 0; j < per_map; ++j) {
        const double d = a[j] - b[j];
        acc += d * d;
      }
      total += std::sqrt(acc);
    } else {
      for (std::size_t j = 0; j < per_map; ++j) acc += a[j] * b[j];
      total += acc;
    }
  }
  return total / static_cast<double>(n);
}

double dynbc_distance(const ModelParams& model_a, const ModelParams& model_b, const ReferenceSet& refset,
                      DistanceMetric metric) {
  if (!model_a.aggregable_with(model_b)) throw ContractError("dynbc_distance: model architectures differ");
  if (refset.patches.empty()) throw ContractError("dynbc_distance: reference set is empty");
  const Tensor inputs = augmented_inputs(refset);
  return prediction_distance(predict_probabilities(model_a, inputs), predict_probabilities(model_b, inputs), metric);
}

double GateState::acceptance_bound() const { return threshold_factor * std::max(delta_max, delta_floor); }

void GateState::validate() const {
  if (!(threshold_factor > 1.0)) throw ContractError("gate: threshold factor must exceed 1");
  if (!(delta_max >= 0.0)) throw ContractError("gate: delta_max must be non-negative");
  if (warmup_rounds_remaining < 0) throw ContractError("gate: warmup rounds must be non-negative");
  if (!(delta_floor >= 0.0)) throw ContractError("gate: delta floor must be non-negative");
}

GateDecision gate_spatial(GateState& state, double delta) {
  check_delta(delta);
  GateDecision d;
  d.delta = delta;
  d.delta_max_before = state.delta_max;
  if (state.warmup_active() || delta <= state.acceptance_bound()) {
    d.verdict = Verdict::Accept;
    state.delta_max = std::max(state.delta_max, delta);
  } else {
    d.verdict = Verdict::Reject;
  }
  d.delta_max_after = state.delta_max;
  return d;
}

TemporalVerdict gate_temporal(const GateState& state, double delta) {
  check_delta(delta);
  if (state.warmup_active() || delta <= state.acceptance_bound()) return TemporalVerdict::Commit;
  return TemporalVerdict::Rollback;
}

void end_round(GateState& state) {
  if (state.warmup_rounds_remaining > 0) --state.warmup_rounds_remaining;
}

}  // namespace dynfed
