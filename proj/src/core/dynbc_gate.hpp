#pragma once

#include <string>

#include "synthdata.hpp"
#include "tensor_nn.hpp"

namespace dynfed {

enum class DistanceMetric {
  DiffNorm,    // mean over patches of || p_a - p_b ||_2
  DotProduct,  // mean over patches of <p_a, p_b>
};

std::string to_string(DistanceMetric metric);

/// Sigmoid probability maps [N,1,H,W] of `model` on pre-augmented inputs.
Tensor predict_probabilities(const ModelParams& model, const Tensor& inputs);

/// Probability maps on the reference set, each patch under its assigned augmentation.
Tensor prediction_of(const ModelParams& model, const ReferenceSet& refset);

/// Per-patch comparison of two stacks of prediction maps, averaged over patches.
double prediction_distance(const Tensor& pred_a, const Tensor& pred_b, DistanceMetric metric);

double dynbc_distance(const ModelParams& model_a, const ModelParams& model_b, const ReferenceSet& refset,
                      DistanceMetric metric);

struct GateState {
  double threshold_factor = 2.0;
  double delta_max = 0.0;
  int warmup_rounds_remaining = 1;
  double delta_floor = 1e-6;
  DistanceMetric metric = DistanceMetric::DiffNorm;

  bool warmup_active() const { return warmup_rounds_remaining > 0; }
  /// Largest delta the gate accepts right now (ignores warmup).
  double acceptance_bound() const;
  void validate() const;

  friend bool operator==(const GateState&, const GateState&) = default;
};

enum class Verdict { Accept, Reject };
enum class TemporalVerdict { Commit, Rollback };

std::string to_string(Verdict v);
std::string to_string(TemporalVerdict v);

struct GateDecision {
  Verdict verdict = Verdict::Accept;
  double delta = 0.0;
  double delta_max_before = 0.0;
  double delta_max_after = 0.0;
};

/// Per-client acceptance check; accepted deltas raise delta_max, rejected ones never do.
GateDecision gate_spatial(GateState& state, double delta);

/// Commit/rollback check for an aggregated update; never touches delta_max.
TemporalVerdict gate_temporal(const GateState& state, double delta);

/// Marks a global-round boundary (counts down warmup).
void end_round(GateState& state);

}  // namespace dynfed
