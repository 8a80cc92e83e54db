// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/optim.hpp"

#include <cmath>
#include <string>

#include "hkd/error.hpp"

namespace hkd {

namespace {

void check_grads(const ModelParams& params, std::span<const Tensor> grads, const char* who) {
  if (grads.size() != params.size())
    throw ContractError(std::string(who) + ": " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params[i].shape())
      throw ShapeError(std::string(who) + ": gradient of '" + params.name(i) + "' is " + to_string(grads[i].shape()) +
                       ", parameter is " + to_string(params[i].shape()));
    if (!grads[i].all_finite())
      throw NumericalError(std::string(who) + ": non-finite gradient for '" + params.name(i) + "'");
  }
}

std::vector<Tensor> zeros_like(const ModelParams& params) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.emplace_back(params[i].rows(), params[i].cols());
  return out;
}

void restore(std::vector<Tensor>& slots, const ModelParams& state, const std::string& prefix) {
  slots.clear();
  for (std::size_t i = 0;; ++i) {
    const std::string name = prefix + std::to_string(i);
    if (!state.contains(name)) break;
    slots.push_back(state.at(name));
  }
}

}  // namespace

void SgdConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("sgd: lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("sgd: weight_decay must be non-negative");
  if (!(decay > 0.0)) throw ConfigError("sgd: decay must be positive");
}

double SgdConfig::lr_at(std::size_t epoch) const {
  double out = lr;
  for (std::size_t m : milestones)
    if (epoch >= m) out *= decay;
  return out;
}

Sgd::Sgd(SgdConfig config) : config_(std::move(config)) { config_.validate(); }

void Sgd::step(ModelParams& params, std::span<const Tensor> grads, double lr) {
  check_grads(params, grads, "sgd");
  if (velocity_.empty()) velocity_ = zeros_like(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params[i];
    Tensor& v = velocity_[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = config_.momentum * v[k] + (g[k] + config_.weight_decay * w[k]);
      w[k] -= lr * v[k];
    }
    if (!w.all_finite()) throw NumericalError("sgd: parameter '" + params.name(i) + "' became non-finite");
  }
}

ModelParams Sgd::state() const {
  ModelParams out;
  for (std::size_t i = 0; i < velocity_.size(); ++i) out.add("v" + std::to_string(i), velocity_[i]);
  return out;
}

void Sgd::load_state(const ModelParams& state) { restore(velocity_, state, "v"); }

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adam: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("adam: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
}

Adam::Adam(AdamConfig config) : config_(config) { config_.validate(); }

void Adam::step(ModelParams& params, std::span<const Tensor> grads) {
  check_grads(params, grads, "adam");
  if (m_.empty()) {
    m_ = zeros_like(params);
    v_ = zeros_like(params);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m_[i][k] = config_.beta1 * m_[i][k] + (1.0 - config_.beta1) * g[k];
      v_[i][k] = config_.beta2 * v_[i][k] + (1.0 - config_.beta2) * g[k] * g[k];
      w[k] -= config_.lr * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + config_.eps);
    }
    if (!w.all_finite()) throw NumericalError("adam: parameter '" + params.name(i) + "' became non-finite");
  }
}

ModelParams Adam::state() const {
  ModelParams out;
  out.add("t", Tensor::scalar(static_cast<double>(t_)));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    out.add("m" + std::to_string(i), m_[i]);
    out.add("v" + std::to_string(i), v_[i]);
  }
  return out;
}

void Adam::load_state(const ModelParams& state) {
  t_ = state.contains("t") ? static_cast<std::size_t>(state.at("t").item()) : 0;
  restore(m_, state, "m");
  restore(v_, state, "v");
}

}  // namespace hkd
