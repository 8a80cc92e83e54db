// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "hkd/error.hpp"
#include "hkd/gradcheck.hpp"
#include "hkd/meta_loop.hpp"
#include "test_util.hpp"

using namespace hkd;
using namespace hkd::ad;
using hkd::testing::random_distribution;
using hkd::testing::random_tensor;

namespace {

constexpr std::size_t kIn = 4, kHidden = 6, kClasses = 3, kTeacherDim = 5;

DistillSettings toy_settings(double range = 0.5) {
  DistillSettings s;
  s.student.input_dim = kIn;
  s.student.hidden_dims = {kHidden};
  s.student.classes = kClasses;
  s.student.feature_tap = 0;
  s.meta = MetaNetConfig{kClasses, 8, range};
  return s;
}

Batch random_batch(std::mt19937_64& rng, std::size_t n) {
  Batch b;
  b.x = random_tensor(rng, n, kIn, -2, 2);
  for (std::size_t i = 0; i < n; ++i) {
    b.labels.push_back(static_cast<std::size_t>(rng() % kClasses));
    b.ids.push_back(i);
  }
  b.teacher_probs = random_distribution(rng, n, kClasses);
  b.teacher_feature = random_tensor(rng, n, kTeacherDim);
  return b;
}

MetaSet random_meta_set(std::mt19937_64& rng, std::size_t n) {
  MetaSet m;
  m.x = random_tensor(rng, n, kIn, -2, 2);
  for (std::size_t i = 0; i < n; ++i) m.labels.push_back(static_cast<std::size_t>(rng() % kClasses));
  return m;
}

ModelParams randomized(ModelParams p, std::mt19937_64& rng, double spread = 1.0) {
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = random_tensor(rng, p[i].rows(), p[i].cols(), -spread, spread);
  return p;
}

struct Toy {
  DistillSettings settings;
  ModelParams student, projector, metanet;
  Batch batch;
  MetaSet meta_set;
};

Toy make_toy(std::uint64_t seed, bool zero_metanet = false, double range = 0.5) {
  std::mt19937_64 rng(seed);
  Toy t;
  t.settings = toy_settings(range);
  t.student = init_classifier(t.settings.student, rng);
  t.projector = init_projector(kHidden, kTeacherDim, rng);
  t.metanet = init_metanet(t.settings.meta, rng);
  if (!zero_metanet) t.metanet = randomized(t.metanet, rng);
  t.batch = random_batch(rng, 8);
  t.meta_set = random_meta_set(rng, 12);
  return t;
}

}  // namespace

TEST_CASE("scalar look-ahead step and its derivative in the weight") {
  Tape tape;
  const Var theta = tape.parameter(Tensor::scalar(1.0));
  const Var beta = tape.parameter(Tensor::scalar(2.0));
  const Var params[1] = {theta};
  const Var tp = sgd_lookahead(mul(beta, square(theta)), params, 0.1)[0];
  CHECK(tp.value().item() == doctest::Approx(0.6).epsilon(1e-15));
  const Var b[1] = {beta};
  const double d = grad_values(tp, b)[0].item();
  CHECK(d == doctest::Approx(-0.2).epsilon(1e-15));

  auto at = [](double bv) {
    Tape t;
    const Var th = t.parameter(Tensor::scalar(1.0));
    const Var p[1] = {th};
    return sgd_lookahead(mul(t.constant(Tensor::scalar(bv)), square(th)), p, 0.1)[0].value().item();
  };
  CHECK((at(2.0 + 1e-5) - at(2.0 - 1e-5)) / 2e-5 == doctest::Approx(-0.2).epsilon(1e-9));
}

TEST_CASE("error subset selection") {
  const std::vector<std::size_t> labels{0, 1, 0, 1};
  const Tensor mixed = Tensor::from_rows({{0.9, 0.1}, {0.8, 0.2}, {0.6, 0.4}, {0.7, 0.3}});
  CHECK(select_error_subset(mixed, labels) == std::vector<std::size_t>{1, 3});
  const Tensor right = Tensor::from_rows({{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.3, 0.7}});
  CHECK(select_error_subset(right, labels).empty());
  const Tensor wrong = Tensor::from_rows({{0.1, 0.9}, {0.8, 0.2}, {0.4, 0.6}, {0.7, 0.3}});
  CHECK(select_error_subset(wrong, labels) == std::vector<std::size_t>{0, 1, 2, 3});
  // Ties go to the lowest class index.
  const std::vector<std::size_t> one{1};
  CHECK(select_error_subset(Tensor::row({0.5, 0.5}), one) == std::vector<std::size_t>{0});
}

TEST_CASE("pseudo update equals a hand-derived SGD step") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Toy t = make_toy(seed);
    const double lr = 0.3;
    const std::size_t n = t.batch.x.rows();

    Tape tape;
    const auto sv = t.student.bind(tape, true);
    const auto pv = t.projector.bind(tape, false);
    const auto mv = t.metanet.bind(tape, false);
    const auto pseudo = pseudo_update(t.settings, sv, pv, mv, t.batch, lr);

    // Plain forward and backward of the same network, no tape.
    const Tensor &w1 = t.student[0], &b1 = t.student[1], &w2 = t.student[2], &b2 = t.student[3];
    const Tensor &wp = t.projector[0], &bp = t.projector[1];
    std::vector<double> pre(n * kHidden), f(n * kHidden), p(n * kClasses);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t h = 0; h < kHidden; ++h) {
        double a = b1[h];
        for (std::size_t d = 0; d < kIn; ++d) a += t.batch.x(i, d) * w1(d, h);
        pre[i * kHidden + h] = a;
        f[i * kHidden + h] = a > 0 ? a : 0.0;
      }
      double mx = -INFINITY;
      std::vector<double> z(kClasses);
      for (std::size_t c = 0; c < kClasses; ++c) {
        z[c] = b2[c];
        for (std::size_t h = 0; h < kHidden; ++h) z[c] += f[i * kHidden + h] * w2(h, c);
        mx = std::max(mx, z[c]);
      }
      double s = 0.0;
      for (std::size_t c = 0; c < kClasses; ++c) s += (p[i * kClasses + c] = std::exp(z[c] - mx));
      for (std::size_t c = 0; c < kClasses; ++c) p[i * kClasses + c] /= s;
    }
    const Tensor probs(n, kClasses, p);
    const auto w = meta_predict(t.settings.meta, t.metanet, probs, t.batch.teacher_probs);

    Tensor gw1(kIn, kHidden), gb1(1, kHidden), gw2(kHidden, kClasses), gb2(1, kClasses);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> dz(kClasses), df(kHidden, 0.0);
      for (std::size_t c = 0; c < kClasses; ++c) {
        const double onehot = c == t.batch.labels[i] ? 1.0 : 0.0;
        dz[c] = ((p[i * kClasses + c] - onehot) + w[i].beta * (p[i * kClasses + c] - t.batch.teacher_probs(i, c))) /
                static_cast<double>(n);
      }
      for (std::size_t k = 0; k < kTeacherDim; ++k) {
        double q = bp[k];
        for (std::size_t h = 0; h < kHidden; ++h) q += f[i * kHidden + h] * wp(h, k);
        const double dq = w[i].gamma * 2.0 * (q - t.batch.teacher_feature(i, k)) /
                          static_cast<double>(kTeacherDim) / static_cast<double>(n);
        for (std::size_t h = 0; h < kHidden; ++h) df[h] += dq * wp(h, k);
      }
      for (std::size_t h = 0; h < kHidden; ++h)
        for (std::size_t c = 0; c < kClasses; ++c) {
          df[h] += dz[c] * w2(h, c);
          gw2(h, c) += f[i * kHidden + h] * dz[c];
        }
      for (std::size_t c = 0; c < kClasses; ++c) gb2[c] += dz[c];
      for (std::size_t h = 0; h < kHidden; ++h) {
        const double dpre = pre[i * kHidden + h] > 0 ? df[h] : 0.0;
        gb1[h] += dpre;
        for (std::size_t d = 0; d < kIn; ++d) gw1(d, h) += t.batch.x(i, d) * dpre;
      }
    }
    const Tensor* grads[4] = {&gw1, &gb1, &gw2, &gb2};
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t e = 0; e < t.student[k].size(); ++e)
        CHECK(std::abs(pseudo[k].value()[e] - (t.student[k][e] - lr * (*grads[k])[e])) < 1e-12);
  }
}

TEST_CASE("pseudo update with unit weights is a static distillation step") {
  const Toy t = make_toy(9, /*zero_metanet=*/true);
  Tape tape;
  const auto sv = t.student.bind(tape, true);
  const auto pv = t.projector.bind(tape, false);
  const auto mv = t.metanet.bind(tape, false);
  const auto pseudo = pseudo_update(t.settings, sv, pv, mv, t.batch, 0.2);

  Tape ref;
  const auto rv = t.student.bind(ref, true);
  const auto rp = t.projector.bind(ref, false);
  const StudentTerms st = student_terms(t.settings, rv, rp, t.batch);
  const auto g = grad_values(static_kd_loss(st.terms), rv);
  for (std::size_t k = 0; k < g.size(); ++k)
    for (std::size_t e = 0; e < g[k].size(); ++e)
      CHECK(pseudo[k].value()[e] == t.student[k][e] - 0.2 * g[k][e]);
}

TEST_CASE("hypergradient matches finite differences of the composed map") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Toy t = make_toy(100 + seed);
    const double lr = 0.5;
    CHECK(t.student.count() + t.projector.count() + t.metanet.count() <= 500);

    ModelParams updated = t.metanet;
    Adam adam(AdamConfig{});
    const MetaStepResult r = meta_step(t.settings, t.student, t.projector, updated, adam, t.batch, t.meta_set, lr);
    REQUIRE(r.loss.has_value());
    REQUIRE_FALSE(r.subset.empty());

    const std::vector<std::size_t> subset = r.subset;
    const ScalarFunction composed = [&](Tape&, std::span<const Var> mv) {
      return *meta_objective(t.settings, t.student, t.projector, mv, t.batch, t.meta_set, lr, &subset).loss;
    };
    // The analytic side of the check recomputes the same hypergradient; pin
    // it to what meta_step reported first.
    Tape tape;
    const auto mv = t.metanet.bind(tape, true);
    const auto again = grad_values(composed(tape, mv), mv);
    for (std::size_t k = 0; k < again.size(); ++k) CHECK(again[k] == r.hypergradient[k]);

    const GradCheckReport rep = finite_diff_check(composed, t.metanet.tensors());
    INFO("seed " << seed << " worst " << rep.analytic << " vs " << rep.numeric);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("zero-initialized meta net receives a non-zero hypergradient") {
  Toy t = make_toy(7, /*zero_metanet=*/true);
  Adam adam(AdamConfig{});
  const ModelParams before = t.metanet;
  const MetaStepResult r = meta_step(t.settings, t.student, t.projector, t.metanet, adam, t.batch, t.meta_set, 0.5);
  REQUIRE_FALSE(r.subset.empty());
  double norm = 0.0;
  for (const Tensor& g : r.hypergradient)
    for (double v : g.values()) norm += v * v;
  CHECK(norm > 0.0);
  CHECK_FALSE(t.metanet == before);
}

TEST_CASE("zero look-ahead rate gives an exactly zero hypergradient") {
  Toy t = make_toy(8);
  Adam adam(AdamConfig{});
  const ModelParams before = t.metanet;
  const ModelParams student = t.student;
  const MetaStepResult r = meta_step(t.settings, t.student, t.projector, t.metanet, adam, t.batch, t.meta_set, 0.0);
  REQUIRE(r.loss.has_value());
  for (const Tensor& g : r.hypergradient)
    for (double v : g.values()) CHECK(v == 0.0);
  CHECK(t.metanet == before);
  CHECK(t.student == student);
  CHECK(adam.steps() == 1);
}

TEST_CASE("an empty error subset skips the update") {
  Toy t = make_toy(10);
  // Relabel the meta set with the pseudo student's own predictions.
  {
    Tape tape;
    const auto mv = t.metanet.bind(tape, false);
    const std::vector<std::size_t> none;
    MetaSet probe = t.meta_set;
    const MetaObjective o = meta_objective(t.settings, t.student, t.projector, mv, t.batch, probe, 0.5, &none);
    CHECK_FALSE(o.loss.has_value());
  }
  Tape tape;
  const auto sv = t.student.bind(tape, true);
  const auto pv = t.projector.bind(tape, false);
  const auto mv = t.metanet.bind(tape, false);
  const auto pseudo = pseudo_update(t.settings, sv, pv, mv, t.batch, 0.5);
  const Tensor probs = classifier_forward(t.settings.student, pseudo, tape.constant(t.meta_set.x)).probs.value();
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kClasses; ++c)
      if (probs(r, c) > probs(r, best)) best = c;
    t.meta_set.labels[r] = best;
  }
  Adam adam(AdamConfig{});
  const ModelParams before = t.metanet;
  const MetaStepResult r = meta_step(t.settings, t.student, t.projector, t.metanet, adam, t.batch, t.meta_set, 0.5);
  CHECK_FALSE(r.loss.has_value());
  CHECK(r.subset.empty());
  CHECK(t.metanet == before);
  CHECK(adam.steps() == 0);
}

namespace {

std::vector<ModelParams> run_outer(Mode mode, double range, std::size_t steps, bool train_metanet) {
  Toy t = make_toy(55, /*zero_metanet=*/true, range);
  std::mt19937_64 rng(3);
  Sgd so(SgdConfig{}), sp(SgdConfig{});
  Adam adam(AdamConfig{});
  WeightStore store;
  std::vector<ModelParams> trajectory;
  for (std::size_t k = 0; k < steps; ++k) {
    if (train_metanet && k % 3 == 0) meta_step(t.settings, t.student, t.projector, t.metanet, adam, t.batch, t.meta_set, 0.5);
    const ModelParams metanet = t.metanet;
    outer_step(mode, t.settings, t.student, t.projector, t.metanet, &store, so, sp, t.batch, 0.1, k);
    CHECK(t.metanet == metanet);
    trajectory.push_back(t.student);
    trajectory.back().append(t.projector.prefixed("projector."));
  }
  return trajectory;
}

}  // namespace

TEST_CASE("outer steps reduce to static distillation") {
  const auto reference = run_outer(Mode::static_kd, 0.5, 12, false);
  CHECK(run_outer(Mode::hkd, 0.5, 12, false) == reference);
  CHECK(run_outer(Mode::mwn, 0.5, 12, false) == reference);
  CHECK(run_outer(Mode::hkd, 0.0, 12, true) == run_outer(Mode::static_kd, 0.0, 12, false));
  CHECK(run_outer(Mode::hkd, 0.5, 12, true) == run_outer(Mode::hkd, 0.5, 12, true));
  CHECK_FALSE(run_outer(Mode::hkd, 0.5, 12, true) == reference);
  CHECK_FALSE(run_outer(Mode::un_dy, 0.5, 12, false) == reference);
}

TEST_CASE("outer weights per mode") {
  Toy t = make_toy(12);
  const Tensor probs = random_distribution(*std::make_unique<std::mt19937_64>(1), 8, kClasses);
  WeightStore store;
  for (const WeightPair& w : outer_weights(Mode::static_kd, t.settings, t.metanet, nullptr, probs, t.batch, 0))
    CHECK(w == WeightPair{1.0, 1.0});
  const auto mwn = outer_weights(Mode::mwn, t.settings, t.metanet, nullptr, probs, t.batch, 0);
  CHECK(mwn == meta_predict(t.settings.meta, t.metanet, probs, t.batch.teacher_probs));
  CHECK(outer_weights(Mode::hkd, t.settings, t.metanet, &store, probs, t.batch, 0) == mwn);
  CHECK(store.size() == 8);
  CHECK_THROWS_AS(outer_weights(Mode::hkd, t.settings, t.metanet, nullptr, probs, t.batch, 1), ContractError);
  for (std::size_t i = 0; i < 8; ++i) {
    const WeightPair w = outer_weights(Mode::un_dy, t.settings, t.metanet, nullptr, probs, t.batch, 0)[i];
    CHECK(w.beta == w.gamma);
    CHECK(w.beta == uncertainty_weights(uncertainty(probs.row_values(i), true), 0.5).beta);
  }
}

TEST_CASE("mode names round trip") {
  for (Mode m : {Mode::static_kd, Mode::un_dy, Mode::mwn, Mode::hkd}) CHECK(parse_mode(mode_name(m)) == m);
  CHECK_THROWS_AS(parse_mode("full"), ConfigError);
}

TEST_CASE("sgd and adam update rules") {
  ModelParams p;
  p.add("w", Tensor::row({1.0, -2.0}));
  SgdConfig sc;
  sc.lr = 0.1;
  sc.momentum = 0.9;
  sc.weight_decay = 0.01;
  sc.milestones = {2, 4};
  Sgd sgd(sc);
  const Tensor g[1] = {Tensor::row({0.5, 0.25})};
  sgd.step(p, g, 0.1);
  CHECK(p[0][0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.01)).epsilon(1e-15));
  const double v0 = 0.5 + 0.01;
  const double w1 = p[0][0];
  sgd.step(p, g, 0.1);
  CHECK(p[0][0] == doctest::Approx(w1 - 0.1 * (0.9 * v0 + 0.5 + 0.01 * w1)).epsilon(1e-15));
  CHECK(sc.lr_at(1) == 0.1);
  CHECK(sc.lr_at(2) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(sc.lr_at(5) == doctest::Approx(0.001).epsilon(1e-15));

  ModelParams q;
  q.add("w", Tensor::row({1.0, -2.0}));
  Adam adam(AdamConfig{});
  const Tensor ga[1] = {Tensor::row({3.0, -0.001})};
  adam.step(q, ga);
  CHECK(q[0][0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-10));
  CHECK(q[0][1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));

  Sgd restored(sc);
  restored.load_state(sgd.state());
  CHECK(restored.state() == sgd.state());
  Adam adam2(AdamConfig{});
  adam2.load_state(adam.state());
  CHECK(adam2.state() == adam.state());
  CHECK(adam2.steps() == 1);

  const Tensor bad[1] = {Tensor::row({NAN, 0.0})};
  CHECK_THROWS_AS(sgd.step(p, bad, 0.1), NumericalError);
  SgdConfig zero_lr;
  zero_lr.lr = 0.0;
  CHECK_THROWS_AS(Sgd{zero_lr}, ConfigError);
}

TEST_CASE("a meta step lowers the meta objective on its subset") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Toy t = make_toy(300 + seed);
    auto objective = [&](const ModelParams& metanet, const std::vector<std::size_t>& subset) {
      Tape tape;
      const auto mv = metanet.bind(tape, false);
      return meta_objective(t.settings, t.student, t.projector, mv, t.batch, t.meta_set, 0.5, &subset)
          .loss->value()
          .item();
    };
    AdamConfig small;
    small.lr = 1e-4;
    Adam adam(small);
    const ModelParams before = t.metanet;
    const MetaStepResult r = meta_step(t.settings, t.student, t.projector, t.metanet, adam, t.batch, t.meta_set, 0.5);
    REQUIRE(r.loss.has_value());
    CHECK(objective(before, r.subset) == *r.loss);
    CHECK(objective(t.metanet, r.subset) < *r.loss);
  }
}
