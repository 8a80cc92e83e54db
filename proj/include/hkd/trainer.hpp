// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>

#include "hkd/config.hpp"

namespace hkd {

inline constexpr std::string_view kMetricsHeader =
    "iteration,epoch,ce,kd_van,kd_aux,total,beta_mean,gamma_mean,meta_loss,error_subset_size,eval_acc";
inline constexpr std::string_view kWeightsHeader =
    "epoch,iteration,beta_mean,beta_std,gamma_mean,gamma_std,frac_low_uncertainty";
inline constexpr std::string_view kTeacherMetricsHeader = "iteration,epoch,ce,eval_acc";

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// Fraction of rows whose argmax equals the label.
double accuracy(const ClassifierSpec& spec, const ModelParams& params, const Dataset& data);

struct TeacherResult {
  ModelParams params;
  double eval_acc = 0.0;
  bool interrupted = false;
};

/// Cross-entropy training of the teacher on the training split. Writes the
/// metrics CSV (header first) to `metrics`.
TeacherResult train_teacher(const RunConfig& config, const Datasets& data, std::ostream& metrics,
                            const std::atomic<bool>* stop = nullptr);

/// Every piece of distillation state, as one checkpointable set of tensors.
struct DistillState {
  ModelParams student;
  ModelParams projector;
  ModelParams metanet;
  WeightStore store;
  ModelParams student_optimizer;
  ModelParams projector_optimizer;
  ModelParams meta_optimizer;
  std::size_t epoch = 0;
  std::size_t iteration = 0;

  ModelParams to_params() const;
  static DistillState from_params(const ModelParams& params);
};

struct DistillSinks {
  std::ostream* metrics = nullptr;
  std::ostream* weights = nullptr;
  /// Called after each epoch; `best` marks a new best eval accuracy.
  std::function<void(const DistillState&, bool best)> checkpoint;
  const std::atomic<bool>* stop = nullptr;
  /// Called after every outer step with the updated student and projector.
  std::function<void(std::size_t iteration, const ModelParams& student, const ModelParams& projector)> after_step;
};

struct DistillResult {
  DistillState state;
  double final_eval_acc = 0.0;
  double best_eval_acc = 0.0;
  /// Smallest and largest per-sample beta or gamma used by any outer step.
  double weight_min = 1.0;
  double weight_max = 1.0;
  bool interrupted = false;
};

/// The full loop: an outer step every iteration, a meta step before the outer
/// step of every interval-th iteration in mwn and hkd modes, evaluation at the
/// end of every epoch.
DistillResult distill(const RunConfig& config, const ModelParams& teacher, const Datasets& data,
                      const DistillSinks& sinks);

}  // namespace hkd
