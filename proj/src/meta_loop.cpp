// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/meta_loop.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hkd/error.hpp"

namespace hkd {

using ad::Var;

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::static_kd: return "static";
    case Mode::un_dy: return "un-dy";
    case Mode::mwn: return "mwn";
    case Mode::hkd: return "hkd";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::static_kd, Mode::un_dy, Mode::mwn, Mode::hkd})
    if (mode_name(m) == name) return m;
  throw ConfigError("mode: unknown value '" + std::string(name) + "' (expected static, un-dy, mwn or hkd)");
}

bool uses_metanet(Mode mode) { return mode == Mode::mwn || mode == Mode::hkd; }

namespace {

std::vector<double> row_uncertainty(const Tensor& probs, bool normalize) {
  std::vector<double> u(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) u[r] = uncertainty(probs.row_values(r), normalize);
  return u;
}

void mean_std(std::span<const double> v, double& mean, double& std) {
  double s = 0.0;
  for (double x : v) s += x;
  mean = s / static_cast<double>(v.size());
  double q = 0.0;
  for (double x : v) q += (x - mean) * (x - mean);
  std = std::sqrt(q / static_cast<double>(v.size()));
}

}  // namespace

StudentTerms student_terms(const DistillSettings& settings, std::span<const Var> student,
                           std::span<const Var> projector, const Batch& batch) {
  if (student.empty()) throw ContractError("student_terms: no student parameters");
  ad::Tape& tape = student[0].tape();
  const PredictionVars pred = classifier_forward(settings.student, student, tape.constant(batch.x));
  LossTerms terms{cross_entropy_from_probs(pred.probs, batch.labels),
                  kd_vanilla(batch.teacher_probs, pred.probs, settings.temperature),
                  hint_loss(pred.feature, batch.teacher_feature, projector)};
  return StudentTerms{pred, terms};
}

std::vector<Var> sgd_lookahead(Var loss, std::span<const Var> params, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("sgd_lookahead: lr must be finite and non-negative");
  const std::vector<Var> g = ad::grad(loss, params, /*create_graph=*/true);
  std::vector<Var> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back(ad::sub(params[i], ad::scale(g[i], lr)));
  return out;
}

std::vector<Var> pseudo_update(const DistillSettings& settings, std::span<const Var> student,
                               std::span<const Var> projector, std::span<const Var> metanet, const Batch& batch,
                               double lr) {
  const StudentTerms st = student_terms(settings, student, projector, batch);
  ad::Tape& tape = student[0].tape();
  const Var ps = tape.constant(st.prediction.probs.value());
  const WeightVars w = meta_forward(settings.meta, metanet, ps, tape.constant(batch.teacher_probs));
  const CombinedLoss loss = combined_loss(st.terms, w.beta, w.gamma);
  return sgd_lookahead(loss.total, student, lr);
}

std::vector<std::size_t> select_error_subset(const Tensor& probs, std::span<const std::size_t> labels) {
  if (labels.size() != probs.rows()) throw ContractError("select_error_subset: one label per row required");
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c)
      if (probs(r, c) > probs(r, best)) best = c;
    if (best != labels[r]) out.push_back(r);
  }
  return out;
}

MetaObjective meta_objective(const DistillSettings& settings, const ModelParams& student,
                             const ModelParams& projector, std::span<const Var> metanet, const Batch& batch,
                             const MetaSet& meta_set, double lr, const std::vector<std::size_t>* fixed_subset) {
  if (metanet.empty()) throw ContractError("meta_objective: no meta-net parameters");
  ad::Tape& tape = metanet[0].tape();
  const std::vector<Var> sv = student.bind(tape, true);
  const std::vector<Var> pv = projector.bind(tape, false);
  const std::vector<Var> pseudo = pseudo_update(settings, sv, pv, metanet, batch, lr);
  const PredictionVars pred = classifier_forward(settings.student, pseudo, tape.constant(meta_set.x));

  MetaObjective out;
  out.subset = fixed_subset ? *fixed_subset : select_error_subset(pred.probs.value(), meta_set.labels);
  out.loss = meta_loss(pred.probs, meta_set.labels, out.subset, settings.meta_target);
  return out;
}

MetaStepResult meta_step(const DistillSettings& settings, const ModelParams& student, const ModelParams& projector,
                         ModelParams& metanet, Adam& optimizer, const Batch& batch, const MetaSet& meta_set,
                         double lr) {
  ad::Tape tape;
  const std::vector<Var> mv = metanet.bind(tape, true);
  MetaObjective obj = meta_objective(settings, student, projector, mv, batch, meta_set, lr);
  MetaStepResult result;
  result.subset = std::move(obj.subset);
  if (!obj.loss) return result;
  result.loss = obj.loss->value().item();
  result.hypergradient = ad::grad_values(*obj.loss, mv);
  optimizer.step(metanet, result.hypergradient);
  return result;
}

std::vector<WeightPair> outer_weights(Mode mode, const DistillSettings& settings, const ModelParams& metanet,
                                      WeightStore* store, const Tensor& student_probs, const Batch& batch,
                                      std::uint64_t step) {
  const std::size_t n = student_probs.rows();
  switch (mode) {
    case Mode::static_kd:
      return std::vector<WeightPair>(n, WeightPair{1.0, 1.0});
    case Mode::un_dy: {
      std::vector<WeightPair> out(n);
      for (std::size_t i = 0; i < n; ++i)
        out[i] = uncertainty_weights(uncertainty(student_probs.row_values(i), true), settings.meta.range);
      return out;
    }
    case Mode::mwn:
      return meta_predict(settings.meta, metanet, student_probs, batch.teacher_probs);
    case Mode::hkd: {
      if (!store) throw ContractError("outer_weights: hkd mode needs a weight store");
      if (batch.ids.size() != n) throw ContractError("outer_weights: one sample id per row required");
      std::vector<WeightPair> out = meta_predict(settings.meta, metanet, student_probs, batch.teacher_probs);
      const std::vector<double> u = row_uncertainty(student_probs, settings.ensemble.normalize_entropy);
      for (std::size_t i = 0; i < n; ++i) out[i] = ensemble(*store, batch.ids[i], out[i], u[i], step, settings.ensemble);
      return out;
    }
  }
  throw ContractError("outer_weights: unknown mode");
}

OuterStepResult outer_step(Mode mode, const DistillSettings& settings, ModelParams& student, ModelParams& projector,
                           const ModelParams& metanet, WeightStore* store, Sgd& student_opt, Sgd& projector_opt,
                           const Batch& batch, double lr, std::uint64_t step) {
  ad::Tape tape;
  std::vector<Var> vars = student.bind(tape, true);
  const std::vector<Var> pv = projector.bind(tape, true);
  vars.insert(vars.end(), pv.begin(), pv.end());
  const std::span<const Var> sv(vars.data(), student.size());

  const StudentTerms st = student_terms(settings, sv, pv, batch);
  const Tensor& probs = st.prediction.probs.value();
  const std::vector<WeightPair> w = outer_weights(mode, settings, metanet, store, probs, batch, step);

  const std::size_t n = w.size();
  Tensor beta(n, 1), gamma(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    beta[i] = w[i].beta;
    gamma[i] = w[i].gamma;
  }
  const CombinedLoss loss =
      combined_loss(st.terms, tape.constant(beta), tape.constant(gamma), settings.meta.range);
  const std::vector<Tensor> grads = ad::grad_values(loss.total, vars);

  OuterStepResult result;
  result.loss = loss.breakdown;
  mean_std(beta.values(), result.weights.beta_mean, result.weights.beta_std);
  mean_std(gamma.values(), result.weights.gamma_mean, result.weights.gamma_std);
  for (const Tensor* t : {&beta, &gamma}) {
    const auto [lo, hi] = std::minmax_element(t->values().begin(), t->values().end());
    result.weights.min = std::min(result.weights.min, *lo);
    result.weights.max = std::max(result.weights.max, *hi);
  }
  std::size_t low = 0;
  for (double u : row_uncertainty(probs, settings.ensemble.normalize_entropy)) low += u < settings.ensemble.threshold;
  result.weights.frac_low_uncertainty = static_cast<double>(low) / static_cast<double>(n);

  student_opt.step(student, std::span<const Tensor>(grads).first(student.size()), lr);
  projector_opt.step(projector, std::span<const Tensor>(grads).subspan(student.size()), lr);
  return result;
}

}  // namespace hkd
