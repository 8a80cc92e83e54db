// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hkd/autodiff.hpp"

namespace hkd::ad {

/// Builds a 1 x 1 output from parameter nodes on the given tape.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Added to the denominator |analytic| + |numeric| so coordinates where both
  // are at rounding level do not dominate.
  double guard = 1e-8;
  // Multiplies the analytic gradient before comparison; 1 except in negative
  // controls of the checker itself.
  double corrupt_factor = 1.0;
};

/// max over coordinates of |analytic - central| / (|analytic| + |central| + guard).
GradCheckReport finite_diff_check(const ScalarFunction& f, std::span<const Tensor> params,
                                  const GradCheckOptions& options = {});

/// h(params) = sum_i <grad_i f(params), direction_i>, differentiated by
/// double backward and compared against central differences of the analytic
/// first gradient.
GradCheckReport double_backward_check(const ScalarFunction& f, std::span<const Tensor> params,
                                      std::span<const Tensor> direction, const GradCheckOptions& options = {});

/// Evaluates f at `params` without recording gradients.
double evaluate(const ScalarFunction& f, std::span<const Tensor> params);

}  // namespace hkd::ad
