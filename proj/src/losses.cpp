// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/losses.hpp"

#include <cmath>
#include <string>

#include "hkd/error.hpp"
#include "hkd/models.hpp"

namespace hkd {

using ad::Var;

namespace {

std::vector<std::size_t> checked_labels(std::span<const std::size_t> labels, Shape probs, const char* what) {
  if (labels.size() != probs.rows)
    throw ContractError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(probs.rows) + " rows");
  for (std::size_t l : labels)
    if (l >= probs.cols)
      throw ContractError(std::string(what) + ": label " + std::to_string(l) + " out of range for " +
                          std::to_string(probs.cols) + " classes");
  return {labels.begin(), labels.end()};
}

Tensor tempered(const Tensor& p, double temperature) {
  Tensor out(p.rows(), p.cols());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < p.cols(); ++c) {
      out(r, c) = std::log(std::max(p(r, c), kProbFloor)) / temperature;
      mx = std::max(mx, out(r, c));
    }
    double z = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) z += (out(r, c) = std::exp(out(r, c) - mx));
    for (std::size_t c = 0; c < p.cols(); ++c) out(r, c) /= z;
  }
  return out;
}

void check_weights(Var w, double range, const char* what) {
  for (double v : w.value().values())
    if (v < 1.0 - range || v > 1.0 + range)
      throw ContractError(std::string(what) + " weight " + std::to_string(v) + " outside [1 - l, 1 + l]");
}

}  // namespace

Var cross_entropy_from_probs(Var probs, std::span<const std::size_t> labels) {
  return ad::scale(ad::log(ad::pick(probs, checked_labels(labels, probs.shape(), "cross_entropy")), kProbFloor), -1.0);
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  return cross_entropy_from_probs(ad::softmax(logits), labels);
}

Var kd_vanilla(const Tensor& teacher_probs, Var student_probs, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("kd_vanilla: temperature must be positive");
  if (teacher_probs.shape() != student_probs.shape())
    throw ShapeError("kd_vanilla: shapes " + to_string(teacher_probs.shape()) + " and " +
                     to_string(student_probs.shape()) + " do not conform");
  require_distribution(teacher_probs, "kd_vanilla(p_T)");
  require_distribution(student_probs.value(), "kd_vanilla(p_S)");

  ad::Tape& tape = student_probs.tape();
  Var ps = student_probs;
  Tensor pt = teacher_probs;
  if (temperature != 1.0) {
    pt = tempered(teacher_probs, temperature);
    ps = ad::softmax(ad::scale(ad::log(student_probs, kProbFloor), 1.0 / temperature));
  }
  Tensor log_pt(pt.rows(), pt.cols());
  for (std::size_t i = 0; i < pt.size(); ++i) log_pt[i] = std::log(std::max(pt[i], kProbFloor));
  const Var t = tape.constant(pt);
  return ad::sum_rows(ad::mul(t, ad::sub(tape.constant(std::move(log_pt)), ad::log(ps, kProbFloor))));
}

Var hint_loss(Var student_feature, const Tensor& teacher_feature, std::span<const Var> projector) {
  const Var projected = project(projector, student_feature);
  if (projected.shape() != teacher_feature.shape())
    throw ShapeError("hint_loss: projected feature " + to_string(projected.shape()) + " vs teacher feature " +
                     to_string(teacher_feature.shape()));
  const Var diff = ad::sub(projected, student_feature.tape().constant(teacher_feature));
  return ad::scale(ad::sum_rows(ad::square(diff)), 1.0 / static_cast<double>(teacher_feature.cols()));
}

CombinedLoss combined_loss(const LossTerms& terms, Var beta, Var gamma, std::optional<double> range) {
  const Shape s = terms.ce.shape();
  if (s.cols != 1 || terms.kd.shape() != s || terms.aux.shape() != s || beta.shape() != s || gamma.shape() != s)
    throw ContractError("combined_loss: per-sample terms and weights must all be n x 1 and aligned");
  if (range) {
    check_weights(beta, *range, "beta");
    check_weights(gamma, *range, "gamma");
  }
  const Var per_sample = ad::add(ad::add(terms.ce, ad::mul(beta, terms.kd)), ad::mul(gamma, terms.aux));
  CombinedLoss out{ad::mean(per_sample), {}};
  const double n = static_cast<double>(s.rows);
  auto mean_of = [n](Var v) {
    double acc = 0.0;
    for (double x : v.value().values()) acc += x;
    return acc / n;
  };
  out.breakdown = {mean_of(terms.ce), mean_of(terms.kd), mean_of(terms.aux), out.total.value().item()};
  return out;
}

Var static_kd_loss(const LossTerms& terms) { return ad::mean(ad::add(ad::add(terms.ce, terms.kd), terms.aux)); }

std::optional<Var> meta_loss(Var probs, std::span<const std::size_t> labels, std::span<const std::size_t> subset,
                             MetaTarget target) {
  checked_labels(labels, probs.shape(), "meta_loss");
  if (subset.empty()) return std::nullopt;
  std::vector<std::size_t> rows(subset.begin(), subset.end());
  std::vector<std::size_t> idx;
  for (std::size_t r : rows) {
    if (r >= labels.size()) throw ContractError("meta_loss: subset row " + std::to_string(r) + " out of range");
    idx.push_back(labels[r]);
  }
  const Var subset_probs = ad::gather_rows(probs, std::move(rows));
  if (target == MetaTarget::true_class)
    return ad::mean(ad::square(ad::add_scalar(ad::pick(subset_probs, std::move(idx)), -1.0)));

  Tensor onehot(subset_probs.shape().rows, subset_probs.shape().cols);
  for (std::size_t r = 0; r < idx.size(); ++r) onehot(r, idx[r]) = 1.0;
  return ad::mean(ad::square(ad::sub(subset_probs, subset_probs.tape().constant(std::move(onehot)))));
}

}  // namespace hkd
