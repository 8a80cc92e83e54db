// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/models.hpp"

#include <cmath>
#include <string>

#include "hkd/error.hpp"

namespace hkd {

using ad::Var;

namespace {

Tensor normal_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Var linear(Var x, Var weight, Var bias) {
  const Var ones = x.tape().constant(Tensor(x.shape().rows, 1, 1.0));
  return ad::add(ad::matmul(x, weight), ad::matmul(ones, bias));
}

ad::ConvGeometry conv_geometry(const ConvTrunkSpec& c, std::size_t layer, std::size_t batch) {
  ad::ConvGeometry g{batch, c.height, c.width, c.channels, c.kernel, c.stride, c.pad};
  for (std::size_t i = 0; i < layer; ++i) {
    const std::size_t oh = g.out_height(), ow = g.out_width();
    g.height = oh;
    g.width = ow;
    g.channels = c.conv_channels[i];
  }
  return g;
}

std::size_t conv_output_dim(const ConvTrunkSpec& c, std::size_t layer) {
  const ad::ConvGeometry g = conv_geometry(c, layer, 1);
  return g.out_height() * g.out_width() * c.conv_channels[layer];
}

std::size_t conv_layer_count(const ClassifierSpec& s) { return s.conv ? s.conv->conv_channels.size() : 0; }

}  // namespace

std::size_t ClassifierSpec::hidden_layer_count() const { return conv_layer_count(*this) + hidden_dims.size(); }

std::size_t ClassifierSpec::feature_dim() const {
  const std::size_t nc = conv_layer_count(*this);
  if (feature_tap < nc) return conv_output_dim(*conv, feature_tap);
  return hidden_dims.at(feature_tap - nc);
}

void ClassifierSpec::validate() const {
  if (input_dim == 0) throw ConfigError("classifier: input_dim must be positive");
  if (classes < 2) throw ConfigError("classifier: classes must be at least 2");
  for (std::size_t h : hidden_dims)
    if (h == 0) throw ConfigError("classifier: hidden dims must be positive");
  if (feature_tap >= hidden_layer_count())
    throw ConfigError("classifier: feature_tap " + std::to_string(feature_tap) + " must index one of " +
                      std::to_string(hidden_layer_count()) + " hidden layers");
  if (conv) {
    if (conv->height * conv->width * conv->channels != input_dim)
      throw ConfigError("classifier: image geometry does not match input_dim");
    if (conv->kernel == 0 || conv->stride == 0) throw ConfigError("classifier: conv kernel/stride must be positive");
    for (std::size_t i = 0; i < conv->conv_channels.size(); ++i) {
      if (conv->conv_channels[i] == 0) throw ConfigError("classifier: conv channels must be positive");
      const ad::ConvGeometry g = conv_geometry(*conv, i, 1);
      if (g.height + 2 * g.pad < g.kernel || g.width + 2 * g.pad < g.kernel)
        throw ConfigError("classifier: conv layer " + std::to_string(i) + " kernel exceeds its input");
    }
  }
}

void MetaNetConfig::validate() const {
  if (classes < 2) throw ConfigError("metanet: classes must be at least 2");
  if (hidden == 0) throw ConfigError("metanet: hidden width must be positive");
  if (!(range >= 0.0 && range <= 1.0)) throw ConfigError("metanet: range must lie in [0, 1]");
}

ModelParams init_classifier(const ClassifierSpec& spec, std::mt19937_64& rng, bool zero_output) {
  spec.validate();
  ModelParams p;
  std::size_t width = spec.input_dim;
  const std::size_t nc = conv_layer_count(spec);
  for (std::size_t i = 0; i < nc; ++i) {
    const ad::ConvGeometry g = conv_geometry(*spec.conv, i, 1);
    const std::size_t out = spec.conv->conv_channels[i];
    p.add("conv" + std::to_string(i) + ".weight",
          normal_tensor(rng, g.patch_size(), out, std::sqrt(2.0 / static_cast<double>(g.patch_size()))));
    p.add("conv" + std::to_string(i) + ".bias", Tensor(1, out));
    width = conv_output_dim(*spec.conv, i);
  }
  for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
    const std::size_t out = spec.hidden_dims[i];
    p.add("fc" + std::to_string(i) + ".weight", normal_tensor(rng, width, out, std::sqrt(2.0 / static_cast<double>(width))));
    p.add("fc" + std::to_string(i) + ".bias", Tensor(1, out));
    width = out;
  }
  p.add("out.weight", zero_output ? Tensor(width, spec.classes)
                                  : normal_tensor(rng, width, spec.classes, std::sqrt(1.0 / static_cast<double>(width))));
  p.add("out.bias", Tensor(1, spec.classes));
  return p;
}

PredictionVars classifier_forward(const ClassifierSpec& spec, std::span<const Var> params, Var x) {
  const std::size_t nc = conv_layer_count(spec);
  const std::size_t expected = 2 * (nc + spec.hidden_dims.size() + 1);
  if (params.size() != expected)
    throw ContractError("classifier_forward: expected " + std::to_string(expected) + " parameter tensors, got " +
                        std::to_string(params.size()));
  if (x.shape().cols != spec.input_dim)
    throw ShapeError("classifier_forward: input " + to_string(x.shape()) + " but input_dim is " +
                     std::to_string(spec.input_dim));

  const std::size_t batch = x.shape().rows;
  std::optional<Var> feature;
  Var h = x;
  std::size_t layer = 0;
  for (std::size_t i = 0; i < nc; ++i, ++layer) {
    const ad::ConvGeometry g = conv_geometry(*spec.conv, i, batch);
    const Var cols = ad::im2col(h, g);
    const Var act = ad::relu(linear(cols, params[2 * layer], params[2 * layer + 1]));
    h = ad::reshape(act, Shape{batch, g.out_height() * g.out_width() * spec.conv->conv_channels[i]});
    if (layer == spec.feature_tap) feature = h;
  }
  for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i, ++layer) {
    h = ad::relu(linear(h, params[2 * layer], params[2 * layer + 1]));
    if (layer == spec.feature_tap) feature = h;
  }
  const Var logits = linear(h, params[2 * layer], params[2 * layer + 1]);
  return PredictionVars{logits, ad::softmax(logits), *feature};
}

Prediction classifier_predict(const ClassifierSpec& spec, const ModelParams& params, const Tensor& x) {
  ad::Tape tape;
  ad::NoGradGuard no_grad(tape);
  const auto vars = params.bind(tape, false);
  const PredictionVars p = classifier_forward(spec, vars, tape.constant(x));
  return Prediction{p.logits.value(), p.probs.value(), p.feature.value()};
}

ModelParams init_metanet(const MetaNetConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t in = 2 * config.classes;
  ModelParams p;
  p.add("fc0.weight", normal_tensor(rng, in, config.hidden, std::sqrt(2.0 / static_cast<double>(in))));
  p.add("fc0.bias", Tensor(1, config.hidden));
  p.add("out.weight", Tensor(config.hidden, 2));
  p.add("out.bias", Tensor(1, 2));
  return p;
}

void require_distribution(const Tensor& p, const char* what, double tol) {
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) {
      if (p(r, c) < 0.0) throw ContractError(std::string(what) + ": negative probability in row " + std::to_string(r));
      s += p(r, c);
    }
    if (std::abs(s - 1.0) > tol)
      throw ContractError(std::string(what) + ": row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

WeightVars meta_forward(const MetaNetConfig& config, std::span<const Var> params, Var student_probs,
                        Var teacher_probs) {
  if (params.size() != 4) throw ContractError("meta_forward: expected 4 parameter tensors");
  if (student_probs.shape() != teacher_probs.shape() || student_probs.shape().cols != config.classes)
    throw ShapeError("meta_forward: probabilities " + to_string(student_probs.shape()) + " and " +
                     to_string(teacher_probs.shape()) + " for " + std::to_string(config.classes) + " classes");
  require_distribution(student_probs.value(), "meta_forward(p_S)");
  require_distribution(teacher_probs.value(), "meta_forward(p_T)");

  const Var input = ad::concat_cols(student_probs, teacher_probs);
  const Var hidden = ad::relu(linear(input, params[0], params[1]));
  const Var z = linear(hidden, params[2], params[3]);
  const double l = config.range;
  const Var w = ad::add_scalar(ad::scale(ad::sigmoid(z), 2.0 * l), 1.0 - l);
  return WeightVars{ad::slice_cols(w, 0, 1), ad::slice_cols(w, 1, 1)};
}

std::vector<WeightPair> meta_predict(const MetaNetConfig& config, const ModelParams& params,
                                     const Tensor& student_probs, const Tensor& teacher_probs) {
  ad::Tape tape;
  ad::NoGradGuard no_grad(tape);
  const auto vars = params.bind(tape, false);
  const WeightVars w = meta_forward(config, vars, tape.constant(student_probs), tape.constant(teacher_probs));
  std::vector<WeightPair> out(student_probs.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {w.beta.value()(i, 0), w.gamma.value()(i, 0)};
  return out;
}

ModelParams init_projector(std::size_t student_dim, std::size_t teacher_dim, std::mt19937_64& rng) {
  ModelParams p;
  p.add("weight", normal_tensor(rng, student_dim, teacher_dim, std::sqrt(1.0 / static_cast<double>(student_dim))));
  p.add("bias", Tensor(1, teacher_dim));
  return p;
}

Var project(std::span<const Var> params, Var student_feature) {
  if (params.size() != 2) throw ContractError("project: expected weight and bias");
  return linear(student_feature, params[0], params[1]);
}

}  // namespace hkd
