// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/ensembler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hkd/error.hpp"

namespace hkd {

void EnsembleConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("ensemble: epsilon must lie in [0, 1]");
  if (!(threshold >= 0.0)) throw ConfigError("ensemble: uncertainty threshold must be non-negative");
}

double uncertainty(std::span<const double> probs, bool normalize) {
  if (probs.size() < 2) throw ContractError("uncertainty: need at least two classes");
  double total = 0.0, h = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw ContractError("uncertainty: negative probability");
    total += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(total - 1.0) > 1e-6) throw ContractError("uncertainty: probabilities sum to " + std::to_string(total));
  return normalize ? h / std::log(static_cast<double>(probs.size())) : h;
}

std::optional<WeightStore::Entry> WeightStore::find(std::uint64_t sample_id) const {
  const auto it = entries_.find(sample_id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void WeightStore::put(std::uint64_t sample_id, WeightPair weights, std::uint64_t step) {
  auto [it, inserted] = entries_.try_emplace(sample_id, Entry{weights, step});
  if (inserted) return;
  if (step <= it->second.step)
    throw ContractError("weight store: step " + std::to_string(step) + " for sample " + std::to_string(sample_id) +
                        " is not newer than stored step " + std::to_string(it->second.step));
  it->second = Entry{weights, step};
}

ModelParams WeightStore::to_params() const {
  ModelParams p;
  if (entries_.empty()) return p;
  const std::size_t n = entries_.size();
  Tensor ids(n, 1), weights(n, 2), steps(n, 1);
  std::size_t i = 0;
  for (const auto& [id, e] : entries_) {
    ids[i] = static_cast<double>(id);
    weights(i, 0) = e.weights.beta;
    weights(i, 1) = e.weights.gamma;
    steps[i] = static_cast<double>(e.step);
    ++i;
  }
  p.add("ids", std::move(ids));
  p.add("weights", std::move(weights));
  p.add("steps", std::move(steps));
  return p;
}

WeightStore WeightStore::from_params(const ModelParams& params) {
  WeightStore store;
  if (params.empty()) return store;
  const Tensor& ids = params.at("ids");
  const Tensor& weights = params.at("weights");
  const Tensor& steps = params.at("steps");
  if (weights.rows() != ids.rows() || steps.rows() != ids.rows() || weights.cols() != 2)
    throw ParseError("weight store: inconsistent tensor shapes");
  for (std::size_t i = 0; i < ids.rows(); ++i)
    store.put(static_cast<std::uint64_t>(ids[i]), {weights(i, 0), weights(i, 1)}, static_cast<std::uint64_t>(steps[i]));
  return store;
}

bool operator==(const WeightStore& a, const WeightStore& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  auto ia = a.entries_.begin();
  for (auto ib = b.entries_.begin(); ib != b.entries_.end(); ++ia, ++ib)
    if (ia->first != ib->first || !(ia->second.weights == ib->second.weights) || ia->second.step != ib->second.step)
      return false;
  return true;
}

WeightPair ensemble(WeightStore& store, std::uint64_t sample_id, WeightPair fresh, double u, std::uint64_t step,
                    const EnsembleConfig& config) {
  const auto previous = store.find(sample_id);
  if (previous && step <= previous->step)
    throw ContractError("ensemble: step " + std::to_string(step) + " for sample " + std::to_string(sample_id) +
                        " is not newer than " + std::to_string(previous->step));
  WeightPair out = fresh;
  if (previous && u < config.threshold) {
    const double e = config.epsilon;
    // Clamped to the segment so rounding never leaves the convex hull.
    auto mix = [e](double a, double b) {
      return std::clamp(e * a + (1.0 - e) * b, std::min(a, b), std::max(a, b));
    };
    out.beta = mix(previous->weights.beta, fresh.beta);
    out.gamma = mix(previous->weights.gamma, fresh.gamma);
  }
  store.put(sample_id, out, step);
  return out;
}

WeightPair uncertainty_weights(double normalized_uncertainty, double range) {
  const double w = 1.0 - range + 2.0 * range * normalized_uncertainty;
  return {w, w};
}

}  // namespace hkd
