// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hkd/gradcheck.hpp"

namespace hkd {

/// One differentiable op exercised on random inputs.
struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  double lo = -1.0;
  double hi = 1.0;
  std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)> build;
};

/// Every op kind of the tape, including the clamped log.
std::vector<OpCase> op_catalog();
/// Random inputs for a case, kept away from non-differentiable points.
std::vector<Tensor> draw_inputs(const OpCase& c, std::mt19937_64& rng);
/// The op followed by a smooth weighted readout to a scalar.
ad::ScalarFunction op_readout(const OpCase& c, std::uint64_t seed);

struct CheckLine {
  std::string kind;  // first-order | second-order | loss | model | hypergradient
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  bool passed() const { return max_rel_error < threshold; }
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  std::size_t seeds = 5;
  /// Name of a check whose analytic gradient is scaled by 1.01 (negative control).
  std::string corrupt;
};

inline constexpr double kFirstOrderTolerance = 1e-5;
inline constexpr double kSecondOrderTolerance = 1e-4;
inline constexpr double kHypergradientTolerance = 1e-4;

/// Finite-difference checks of every op (first and second order), the
/// per-sample distillation loss, the models, and the hypergradient. Each line
/// is the maximum over `seeds` seeds.
std::vector<CheckLine> run_gradcheck_suite(const SuiteOptions& options);

/// One hypergradient check on a toy problem with at most 500 parameters.
double hypergradient_check(std::uint64_t seed, double corrupt_factor = 1.0);

}  // namespace hkd
