// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/gradcheck.hpp"

#include <cmath>

#include "hkd/error.hpp"

namespace hkd::ad {

double evaluate(const ScalarFunction& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.parameter(p));
  return f(tape, vars).value().item();
}

GradCheckReport finite_diff_check(const ScalarFunction& f, std::span<const Tensor> params,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ContractError("finite_diff_check: step must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.parameter(p));
    analytic = grad_values(f(tape, vars), vars);
  }

  GradCheckReport report;
  std::vector<Tensor> probe(params.begin(), params.end());
  for (std::size_t pi = 0; pi < probe.size(); ++pi) {
    for (std::size_t c = 0; c < probe[pi].size(); ++c) {
      const double saved = probe[pi][c];
      probe[pi][c] = saved + options.step;
      const double up = evaluate(f, probe);
      probe[pi][c] = saved - options.step;
      const double down = evaluate(f, probe);
      probe[pi][c] = saved;

      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[pi][c] * options.corrupt_factor;
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + options.guard);
      ++report.coordinates;
      if (rel > report.max_rel_error || std::isnan(rel)) {
        report.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        report.worst_param = pi;
        report.worst_coord = c;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

GradCheckReport double_backward_check(const ScalarFunction& f, std::span<const Tensor> params,
                                      std::span<const Tensor> direction, const GradCheckOptions& options) {
  if (direction.size() != params.size()) throw ContractError("double_backward_check: one direction per parameter");
  std::vector<Tensor> dirs(direction.begin(), direction.end());
  ScalarFunction directional = [&f, dirs](Tape& tape, std::span<const Var> vars) {
    const std::vector<Var> g = grad(f(tape, vars), vars, /*create_graph=*/true);
    Var total = sum(mul(g[0], tape.constant(dirs[0])));
    for (std::size_t i = 1; i < g.size(); ++i) total = add(total, sum(mul(g[i], tape.constant(dirs[i]))));
    return total;
  };
  return finite_diff_check(directional, params, options);
}

}  // namespace hkd::ad
