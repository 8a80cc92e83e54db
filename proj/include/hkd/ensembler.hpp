// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>

#include "hkd/models.hpp"
#include "hkd/params.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

struct EnsembleConfig {
  double epsilon = 0.5;
  double threshold = 0.6;
  /// Divide entropy by log C so it lies in [0, 1].
  bool normalize_entropy = true;

  void validate() const;
};

/// Shannon entropy of one distribution, optionally normalized by log C.
double uncertainty(std::span<const double> probs, bool normalize);

/// Per-sample (beta, gamma) from the previous visit, keyed by sample id.
class WeightStore {
 public:
  struct Entry {
    WeightPair weights;
    std::uint64_t step = 0;
  };

  std::optional<Entry> find(std::uint64_t sample_id) const;
  /// Throws ContractError unless step is strictly newer than the stored one.
  void put(std::uint64_t sample_id, WeightPair weights, std::uint64_t step);

  std::size_t size() const { return entries_.size(); }
  const std::map<std::uint64_t, Entry>& entries() const { return entries_; }

  /// Encoded as three tensors so it travels inside a checkpoint.
  ModelParams to_params() const;
  static WeightStore from_params(const ModelParams& params);

  friend bool operator==(const WeightStore&, const WeightStore&);

 private:
  std::map<std::uint64_t, Entry> entries_;
};

/// Uncertainty-gated temporal ensembling:
///   u <  threshold and history present: eps * previous + (1 - eps) * fresh
///   otherwise:                          fresh
/// The result is stored for the sample at `step`.
WeightPair ensemble(WeightStore& store, std::uint64_t sample_id, WeightPair fresh, double u, std::uint64_t step,
                    const EnsembleConfig& config);

/// Non-meta baseline: beta = gamma = 1 - l + 2 l u_norm.
WeightPair uncertainty_weights(double normalized_uncertainty, double range);

}  // namespace hkd
