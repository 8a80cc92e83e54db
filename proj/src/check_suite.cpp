// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/check_suite.hpp"

#include <algorithm>

#include "hkd/data.hpp"
#include "hkd/error.hpp"
#include "hkd/losses.hpp"
#include "hkd/meta_loop.hpp"
#include "hkd/models.hpp"

namespace hkd {

using ad::ScalarFunction;
using ad::Tape;
using ad::Var;

namespace {

Tensor uniform(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Tensor distribution(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Tensor t = uniform(rng, rows, cols, 0.05, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += t(r, c);
    for (std::size_t c = 0; c < cols; ++c) t(r, c) /= z;
  }
  return t;
}

ModelParams randomized(ModelParams p, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = uniform(rng, p[i].rows(), p[i].cols());
  return p;
}

ad::GradCheckOptions options_for(const std::string& name, const std::string& corrupt) {
  ad::GradCheckOptions o;
  if (name == corrupt) o.corrupt_factor = 1.01;
  return o;
}

}  // namespace

std::vector<OpCase> op_catalog() {
  using namespace ad;
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::vector<std::size_t>{2, 0, 2});
  auto pick_idx = std::make_shared<const std::vector<std::size_t>>(std::vector<std::size_t>{1, 3, 0});
  ConvGeometry g{.batch = 2, .height = 4, .width = 3, .channels = 2, .kernel = 2, .stride = 1, .pad = 1};
  return {
      {"add", {{3, 4}, {3, 4}}, -1, 1, [](Tape&, auto v) { return add(v[0], v[1]); }},
      {"sub", {{3, 4}, {3, 4}}, -1, 1, [](Tape&, auto v) { return sub(v[0], v[1]); }},
      {"mul", {{3, 4}, {3, 4}}, -1, 1, [](Tape&, auto v) { return mul(v[0], v[1]); }},
      {"matmul", {{3, 4}, {4, 2}}, -1, 1, [](Tape&, auto v) { return matmul(v[0], v[1]); }},
      {"transpose", {{3, 4}}, -1, 1, [](Tape&, auto v) { return transpose(v[0]); }},
      {"relu", {{3, 4}}, 0.05, 1, [](Tape&, auto v) { return relu(sub(v[0], v[1])); }},
      {"sigmoid", {{3, 4}}, -2, 2, [](Tape&, auto v) { return sigmoid(v[0]); }},
      {"softmax", {{3, 5}}, -2, 2, [](Tape&, auto v) { return softmax(v[0]); }},
      {"log", {{3, 4}}, 0.2, 2, [](Tape&, auto v) { return log(v[0]); }},
      {"log_clamped", {{3, 4}}, 0.2, 2, [](Tape&, auto v) { return log(v[0], 1e-12); }},
      {"clamp_min", {{3, 4}}, -1, 1, [](Tape&, auto v) { return clamp_min(v[0], -0.5); }},
      {"reciprocal", {{3, 4}}, 0.5, 2, [](Tape&, auto v) { return reciprocal(v[0]); }},
      {"exp", {{3, 4}}, -1, 1, [](Tape&, auto v) { return exp(v[0]); }},
      {"sum", {{3, 4}}, -1, 1, [](Tape&, auto v) { return sum(v[0]); }},
      {"mean", {{3, 4}}, -1, 1, [](Tape&, auto v) { return mean(v[0]); }},
      {"fill", {{1, 1}}, -1, 1, [](Tape&, auto v) { return fill(v[0], Shape{2, 3}); }},
      {"square", {{3, 4}}, -1, 1, [](Tape&, auto v) { return square(v[0]); }},
      {"scale", {{3, 4}}, -1, 1, [](Tape&, auto v) { return scale(v[0], -1.7); }},
      {"add_scalar", {{3, 4}}, -1, 1, [](Tape&, auto v) { return add_scalar(v[0], 0.3); }},
      {"gather_rows", {{3, 4}}, -1, 1, [](Tape&, auto v) { return gather_rows(v[0], {2, 0, 2, 1}); }},
      {"scatter_rows", {{3, 4}}, -1, 1, [idx](Tape&, auto v) { return scatter_rows(v[0], idx, 4); }},
      {"concat_cols", {{3, 2}, {3, 4}}, -1, 1, [](Tape&, auto v) { return concat_cols(v[0], v[1]); }},
      {"slice_cols", {{3, 5}}, -1, 1, [](Tape&, auto v) { return slice_cols(v[0], 1, 3); }},
      {"embed_cols", {{3, 2}}, -1, 1, [](Tape&, auto v) { return embed_cols(v[0], 1, 4); }},
      {"pick", {{3, 4}}, -1, 1, [](Tape&, auto v) { return pick(v[0], {1, 3, 0}); }},
      {"scatter_pick", {{3, 1}}, -1, 1, [pick_idx](Tape&, auto v) { return scatter_pick(v[0], pick_idx, 4); }},
      {"sum_rows", {{3, 4}}, -1, 1, [](Tape&, auto v) { return sum_rows(v[0]); }},
      {"broadcast_cols", {{3, 1}}, -1, 1, [](Tape&, auto v) { return broadcast_cols(v[0], 4); }},
      {"reshape", {{3, 4}}, -1, 1, [](Tape&, auto v) { return reshape(v[0], Shape{2, 6}); }},
      {"im2col", {{2, 24}}, -1, 1, [g](Tape&, auto v) { return im2col(v[0], g); }},
      {"col2im", {{40, 8}}, -1, 1, [g](Tape&, auto v) { return col2im(v[0], g); }},
  };
}

std::vector<Tensor> draw_inputs(const OpCase& c, std::mt19937_64& rng) {
  std::vector<Tensor> params;
  for (Shape s : c.shapes) params.push_back(uniform(rng, s.rows, s.cols, c.lo, c.hi));
  if (c.name == "relu") {
    // relu(a - b): keep |a - b| >= 0.05 away from the kink.
    Tensor b = uniform(rng, c.shapes[0].rows, c.shapes[0].cols, -1, 1);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = params[0][i] - (b[i] >= 0 ? b[i] + 0.05 : b[i] - 0.05);
    params.push_back(b);
  }
  if (c.name == "clamp_min") {
    for (double& v : params[0].values())
      if (std::abs(v + 0.5) < 0.05) v += 0.1;
  }
  return params;
}

ScalarFunction op_readout(const OpCase& c, std::uint64_t seed) {
  return [c, seed](Tape& tape, std::span<const Var> v) {
    const Var y = c.build(tape, v);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    const Var w = tape.constant(uniform(rng, y.shape().rows, y.shape().cols));
    return ad::sum(ad::mul(ad::exp(ad::scale(y, 0.5)), w));
  };
}

double hypergradient_check(std::uint64_t seed, double corrupt_factor) {
  std::mt19937_64 rng(mix_seed(seed, 0x6879706572));
  DistillSettings s;
  s.student.input_dim = 4;
  s.student.hidden_dims = {6};
  s.student.classes = 3;
  s.student.feature_tap = 0;
  s.meta = MetaNetConfig{3, 8, 0.5};
  const ModelParams student = init_classifier(s.student, rng);
  const ModelParams projector = init_projector(6, 5, rng);
  const ModelParams metanet = randomized(init_metanet(s.meta, rng), rng);
  if (student.count() + projector.count() + metanet.count() > 500)
    throw ContractError("hypergradient_check: toy problem exceeds 500 parameters");

  Batch batch;
  batch.x = uniform(rng, 8, 4, -2, 2);
  for (std::size_t i = 0; i < 8; ++i) {
    batch.labels.push_back(static_cast<std::size_t>(rng() % 3));
    batch.ids.push_back(i);
  }
  batch.teacher_probs = distribution(rng, 8, 3);
  batch.teacher_feature = uniform(rng, 8, 5);
  MetaSet meta_set{uniform(rng, 24, 4, -2, 2), {}};
  for (std::size_t i = 0; i < 24; ++i) meta_set.labels.push_back(static_cast<std::size_t>(rng() % 3));
  const double lr = 0.5;

  // The hypergradient as meta_step computes it, against central differences
  // of the composed map with the error subset held at the base point.
  ModelParams stepped = metanet;
  Adam adam(AdamConfig{});
  const MetaStepResult r = meta_step(s, student, projector, stepped, adam, batch, meta_set, lr);
  if (!r.loss) throw ContractError("hypergradient_check: empty error subset");
  const std::vector<std::size_t> subset = r.subset;
  const ScalarFunction composed = [&](Tape&, std::span<const Var> mv) {
    return *meta_objective(s, student, projector, mv, batch, meta_set, lr, &subset).loss;
  };

  std::vector<Tensor> probe = metanet.tensors();
  double worst = 0.0;
  const double h = 1e-5, guard = 1e-8;
  for (std::size_t p = 0; p < probe.size(); ++p)
    for (std::size_t k = 0; k < probe[p].size(); ++k) {
      const double saved = probe[p][k];
      probe[p][k] = saved + h;
      const double up = ad::evaluate(composed, probe);
      probe[p][k] = saved - h;
      const double down = ad::evaluate(composed, probe);
      probe[p][k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = r.hypergradient[p][k] * corrupt_factor;
      const double rel = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + guard);
      worst = std::max(worst, std::isnan(rel) ? INFINITY : rel);
    }
  return worst;
}

std::vector<CheckLine> run_gradcheck_suite(const SuiteOptions& options) {
  std::vector<CheckLine> lines;
  const auto cases = op_catalog();

  for (const OpCase& c : cases) {
    CheckLine first{"first-order", c.name, 0.0, kFirstOrderTolerance};
    CheckLine second{"second-order", c.name, 0.0, kSecondOrderTolerance};
    for (std::size_t k = 0; k < options.seeds; ++k) {
      const std::uint64_t seed = options.seed + k;
      std::mt19937_64 rng(mix_seed(seed, 0x6f70));
      const auto params = draw_inputs(c, rng);
      const auto f = op_readout(c, seed);
      first.max_rel_error = std::max(
          first.max_rel_error, ad::finite_diff_check(f, params, options_for(c.name, options.corrupt)).max_rel_error);
      std::vector<Tensor> dir;
      for (const Tensor& p : params) dir.push_back(uniform(rng, p.rows(), p.cols()));
      second.max_rel_error =
          std::max(second.max_rel_error,
                   ad::double_backward_check(f, params, dir, options_for(c.name, options.corrupt)).max_rel_error);
    }
    lines.push_back(first);
    lines.push_back(second);
  }

  // Full per-sample distillation loss of a 2-class toy student, in every parameter.
  {
    CheckLine line{"loss", "distillation_loss", 0.0, kFirstOrderTolerance};
    CheckLine second{"second-order", "distillation_loss", 0.0, kSecondOrderTolerance};
    for (std::size_t k = 0; k < options.seeds; ++k) {
      std::mt19937_64 rng(mix_seed(options.seed + k, 0x6c6f7373));
      ClassifierSpec spec;
      spec.input_dim = 3;
      spec.hidden_dims = {5};
      spec.classes = 2;
      spec.feature_tap = 0;
      ModelParams params = init_classifier(spec, rng);
      params.append(init_projector(5, 4, rng).prefixed("projector."));
      const Tensor x = uniform(rng, 6, 3, -2, 2);
      const std::vector<std::size_t> labels{0, 1, 1, 0, 1, 0};
      const Tensor pt = distribution(rng, 6, 2), ft = uniform(rng, 6, 4);
      const Tensor beta = uniform(rng, 6, 1, 0.5, 1.5), gamma = uniform(rng, 6, 1, 0.5, 1.5);
      const ScalarFunction f = [&](Tape& tape, std::span<const Var> v) {
        const PredictionVars pred = classifier_forward(spec, v.first(4), tape.constant(x));
        const LossTerms t{cross_entropy_from_probs(pred.probs, labels), kd_vanilla(pt, pred.probs, 1.0),
                          hint_loss(pred.feature, ft, v.subspan(4))};
        return combined_loss(t, tape.constant(beta), tape.constant(gamma)).total;
      };
      line.max_rel_error = std::max(
          line.max_rel_error,
          ad::finite_diff_check(f, params.tensors(), options_for(line.name, options.corrupt)).max_rel_error);
      std::vector<Tensor> dir;
      for (const Tensor& t : params.tensors()) dir.push_back(uniform(rng, t.rows(), t.cols()));
      second.max_rel_error = std::max(
          second.max_rel_error,
          ad::double_backward_check(f, params.tensors(), dir, options_for(line.name, options.corrupt)).max_rel_error);
    }
    lines.push_back(line);
    lines.push_back(second);
  }

  // Meta-net forward.
  {
    CheckLine line{"model", "meta_forward", 0.0, kFirstOrderTolerance};
    for (std::size_t k = 0; k < options.seeds; ++k) {
      std::mt19937_64 rng(mix_seed(options.seed + k, 0x6d657461));
      const MetaNetConfig cfg{3, 6, 0.5};
      const ModelParams p = randomized(init_metanet(cfg, rng), rng);
      const Tensor ps = distribution(rng, 4, 3), pt = distribution(rng, 4, 3);
      const Tensor wb = uniform(rng, 4, 1), wg = uniform(rng, 4, 1);
      const ScalarFunction f = [&](Tape& tape, std::span<const Var> v) {
        const WeightVars w = meta_forward(cfg, v, tape.constant(ps), tape.constant(pt));
        return ad::add(ad::sum(ad::mul(w.beta, tape.constant(wb))), ad::sum(ad::mul(w.gamma, tape.constant(wg))));
      };
      line.max_rel_error = std::max(
          line.max_rel_error, ad::finite_diff_check(f, p.tensors(), options_for(line.name, options.corrupt)).max_rel_error);
    }
    lines.push_back(line);
  }

  {
    CheckLine line{"hypergradient", "meta_step", 0.0, kHypergradientTolerance};
    const double factor = line.name == options.corrupt ? 1.01 : 1.0;
    for (std::size_t k = 0; k < options.seeds; ++k)
      line.max_rel_error = std::max(line.max_rel_error, hypergradient_check(options.seed + k, factor));
    lines.push_back(line);
  }
  if (!options.corrupt.empty() &&
      std::none_of(lines.begin(), lines.end(), [&](const CheckLine& l) { return l.name == options.corrupt; }))
    throw ConfigError("gradcheck: no check named '" + options.corrupt + "'");
  return lines;
}

}  // namespace hkd
