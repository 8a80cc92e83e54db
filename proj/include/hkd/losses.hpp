// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hkd/autodiff.hpp"

namespace hkd {

/// Floor applied to probabilities before every log.
inline constexpr double kProbFloor = 1e-12;

/// Per-sample -log p[label], n x 1, from logits.
ad::Var cross_entropy(ad::Var logits, std::span<const std::size_t> labels);
/// Same, from probabilities already on the tape.
ad::Var cross_entropy_from_probs(ad::Var probs, std::span<const std::size_t> labels);

/// Per-sample KL(p_T^tau || p_S^tau), n x 1. p^tau = softmax(log p / tau).
/// The teacher side is a constant.
ad::Var kd_vanilla(const Tensor& teacher_probs, ad::Var student_probs, double temperature = 1.0);

/// Per-sample mean squared error between projected student feature and the
/// teacher feature, n x 1.
ad::Var hint_loss(ad::Var student_feature, const Tensor& teacher_feature, std::span<const ad::Var> projector);

struct LossTerms {
  ad::Var ce;   // n x 1
  ad::Var kd;   // n x 1
  ad::Var aux;  // n x 1
};

struct LossBreakdown {
  double ce = 0.0;
  double kd_van = 0.0;
  double kd_aux = 0.0;
  double total = 0.0;
};

struct CombinedLoss {
  ad::Var total;
  /// Component means are unweighted.
  LossBreakdown breakdown;
};

/// mean_i [ce_i + beta_i kd_i + gamma_i aux_i]. beta and gamma are n x 1.
/// With range set, every weight must lie in [1 - range, 1 + range].
CombinedLoss combined_loss(const LossTerms& terms, ad::Var beta, ad::Var gamma,
                           std::optional<double> range = std::nullopt);

/// mean_i [ce_i + kd_i + aux_i]: conventional fixed-coefficient distillation.
ad::Var static_kd_loss(const LossTerms& terms);

enum class MetaTarget {
  /// (p[label] - 1)^2 per sample.
  true_class,
  /// mean_c (p[c] - onehot[c])^2 per sample.
  one_hot,
};

/// Mean over the rows listed in `subset` of the meta-set predictions `probs`
/// (labels align with probs). nullopt when the subset is empty, meaning the
/// meta update is skipped.
std::optional<ad::Var> meta_loss(ad::Var probs, std::span<const std::size_t> labels,
                                 std::span<const std::size_t> subset, MetaTarget target = MetaTarget::true_class);

}  // namespace hkd
