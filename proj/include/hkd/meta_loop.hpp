// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Bilevel distillation steps. The inner (meta) step differentiates the meta
// loss of a one-step look-ahead student with respect to the meta-net; the
// outer step trains student and projector with per-sample loss weights.

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hkd/autodiff.hpp"
#include "hkd/ensembler.hpp"
#include "hkd/losses.hpp"
#include "hkd/models.hpp"
#include "hkd/optim.hpp"

namespace hkd {

/// Source of the per-sample (beta, gamma) in the outer step.
enum class Mode { static_kd, un_dy, mwn, hkd };

std::string_view mode_name(Mode mode);
/// "static", "un-dy", "mwn" or "hkd"; anything else is a ConfigError.
Mode parse_mode(std::string_view name);
bool uses_metanet(Mode mode);

/// One training mini-batch with the frozen teacher's outputs for it.
struct Batch {
  Tensor x;
  std::vector<std::size_t> labels;
  std::vector<std::uint64_t> ids;
  Tensor teacher_probs;
  Tensor teacher_feature;
};

struct MetaSet {
  Tensor x;
  std::vector<std::size_t> labels;
};

struct DistillSettings {
  ClassifierSpec student;
  MetaNetConfig meta;
  EnsembleConfig ensemble;
  double temperature = 1.0;
  MetaTarget meta_target = MetaTarget::true_class;
};

struct StudentTerms {
  PredictionVars prediction;
  LossTerms terms;
};

/// Forward pass of the student on the batch and the three per-sample loss terms.
StudentTerms student_terms(const DistillSettings& settings, std::span<const ad::Var> student,
                           std::span<const ad::Var> projector, const Batch& batch);

/// params - lr * d(loss)/d(params), recorded with create_graph so the result
/// stays differentiable in whatever `loss` depended on.
std::vector<ad::Var> sgd_lookahead(ad::Var loss, std::span<const ad::Var> params, double lr);

/// Pseudo student: one plain SGD step on the meta-weighted loss, with weights
/// taken straight from the meta-net (no ensembling). `student` must be
/// parameters of the tape; the projector is held fixed.
std::vector<ad::Var> pseudo_update(const DistillSettings& settings, std::span<const ad::Var> student,
                                   std::span<const ad::Var> projector, std::span<const ad::Var> metanet,
                                   const Batch& batch, double lr);

/// Rows whose argmax (lowest index on ties) differs from the label.
std::vector<std::size_t> select_error_subset(const Tensor& probs, std::span<const std::size_t> labels);

struct MetaObjective {
  std::optional<ad::Var> loss;
  std::vector<std::size_t> subset;
};

/// Meta loss of the pseudo student on the meta set, as a function of the
/// metanet Vars. With `fixed_subset` the error subset is not reselected.
MetaObjective meta_objective(const DistillSettings& settings, const ModelParams& student,
                             const ModelParams& projector, std::span<const ad::Var> metanet, const Batch& batch,
                             const MetaSet& meta_set, double lr,
                             const std::vector<std::size_t>* fixed_subset = nullptr);

struct MetaStepResult {
  /// Empty when the error subset was empty and the update was skipped.
  std::optional<double> loss;
  std::vector<std::size_t> subset;
  std::vector<Tensor> hypergradient;
};

/// Computes the hypergradient and applies one Adam step to `metanet`.
MetaStepResult meta_step(const DistillSettings& settings, const ModelParams& student, const ModelParams& projector,
                         ModelParams& metanet, Adam& optimizer, const Batch& batch, const MetaSet& meta_set,
                         double lr);

struct WeightStats {
  double beta_mean = 1.0;
  double beta_std = 0.0;
  double gamma_mean = 1.0;
  double gamma_std = 0.0;
  double frac_low_uncertainty = 0.0;
  /// Extremes over every beta and gamma of the batch.
  double min = 1.0;
  double max = 1.0;
};

/// Per-sample weights for the outer step. `store` is required in hkd mode;
/// `step` is the visit index used by the ensembler.
std::vector<WeightPair> outer_weights(Mode mode, const DistillSettings& settings, const ModelParams& metanet,
                                      WeightStore* store, const Tensor& student_probs, const Batch& batch,
                                      std::uint64_t step);

struct OuterStepResult {
  LossBreakdown loss;
  WeightStats weights;
};

/// One SGD step on student and projector. The meta-net is only read.
OuterStepResult outer_step(Mode mode, const DistillSettings& settings, ModelParams& student, ModelParams& projector,
                           const ModelParams& metanet, WeightStore* store, Sgd& student_opt, Sgd& projector_opt,
                           const Batch& batch, double lr, std::uint64_t step);

}  // namespace hkd
