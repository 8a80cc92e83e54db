// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "hkd/autodiff.hpp"
#include "hkd/params.hpp"

namespace hkd {

/// Convolutional trunk for image inputs: conv -> relu per entry of
/// `channels`, HWC layout, one image per row.
struct ConvTrunkSpec {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::size_t> conv_channels;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
};

struct ClassifierSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t classes = 2;
  /// Index into the hidden activations (conv layers first, then fully
  /// connected ones) exposed as the intermediate feature.
  std::size_t feature_tap = 0;
  std::optional<ConvTrunkSpec> conv;

  std::size_t hidden_layer_count() const;
  std::size_t feature_dim() const;
  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

struct MetaNetConfig {
  std::size_t classes = 2;
  std::size_t hidden = 64;
  /// Half-width of the weight range around 1.
  double range = 0.5;

  void validate() const;
};

struct WeightPair {
  double beta = 1.0;
  double gamma = 1.0;

  friend bool operator==(const WeightPair&, const WeightPair&) = default;
};

/// Tape-resident outputs of a classifier.
struct PredictionVars {
  ad::Var logits;
  ad::Var probs;
  ad::Var feature;
};

struct Prediction {
  Tensor logits;
  Tensor probs;
  Tensor feature;
};

/// He-normal hidden layers. The output layer is zero when zero_output is
/// set, otherwise scaled normal.
ModelParams init_classifier(const ClassifierSpec& spec, std::mt19937_64& rng, bool zero_output = false);

PredictionVars classifier_forward(const ClassifierSpec& spec, std::span<const ad::Var> params, ad::Var x);

/// Value-only forward on a private tape.
Prediction classifier_predict(const ClassifierSpec& spec, const ModelParams& params, const Tensor& x);

/// Final layer is zero, so every generated weight starts at exactly 1.
ModelParams init_metanet(const MetaNetConfig& config, std::mt19937_64& rng);

struct WeightVars {
  ad::Var beta;   // n x 1
  ad::Var gamma;  // n x 1
};

/// (beta, gamma) = 1 - l + 2 l sigmoid(MLP([p_S | p_T])). Rows of both
/// inputs must be distributions to within 1e-6.
WeightVars meta_forward(const MetaNetConfig& config, std::span<const ad::Var> params, ad::Var student_probs,
                        ad::Var teacher_probs);

std::vector<WeightPair> meta_predict(const MetaNetConfig& config, const ModelParams& params,
                                     const Tensor& student_probs, const Tensor& teacher_probs);

/// Linear map from student feature width to teacher feature width.
ModelParams init_projector(std::size_t student_dim, std::size_t teacher_dim, std::mt19937_64& rng);

ad::Var project(std::span<const ad::Var> params, ad::Var student_feature);

/// Throws ContractError unless every row sums to 1 within tol and is non-negative.
void require_distribution(const Tensor& p, const char* what, double tol = 1e-6);

}  // namespace hkd
