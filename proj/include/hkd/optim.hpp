// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hkd/params.hpp"

namespace hkd {

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Epochs at which the learning rate is multiplied by `decay`.
  std::vector<std::size_t> milestones;
  double decay = 0.1;

  void validate() const;
  double lr_at(std::size_t epoch) const;
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///   v = momentum * v + (g + wd * w);  w -= lr * v
class Sgd {
 public:
  explicit Sgd(SgdConfig config);

  void step(ModelParams& params, std::span<const Tensor> grads, double lr);
  const SgdConfig& config() const { return config_; }

  ModelParams state() const;
  void load_state(const ModelParams& state);

 private:
  SgdConfig config_;
  std::vector<Tensor> velocity_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

class Adam {
 public:
  explicit Adam(AdamConfig config);

  void step(ModelParams& params, std::span<const Tensor> grads);
  std::size_t steps() const { return t_; }

  ModelParams state() const;
  void load_state(const ModelParams& state);

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace hkd
