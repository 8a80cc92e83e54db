// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/trainer.hpp"

#include <algorithm>
#include <charconv>

#include "hkd/error.hpp"
#include "hkd/log.hpp"

namespace hkd {

namespace {

constexpr std::size_t kEvalChunk = 1024;

// Stream seeds, one per consumer, so that adding a consumer never shifts another.
enum SeedSlot : std::uint64_t {
  kTeacherInit = 1,
  kTeacherBatches = 2,
  kStudentInit = 11,
  kProjectorInit = 12,
  kMetanetInit = 13,
  kStudentBatches = 14,
  kAugment = 15,
};

Tensor gather(const Tensor& all, std::span<const std::size_t> rows) {
  Tensor out(rows.size(), all.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = all.row_values(rows[r]);
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * all.cols()));
  }
  return out;
}

Tensor batch_inputs(const Dataset& data, std::span<const std::size_t> positions, const AugmentSpec& augment_spec,
                    std::uint64_t seed, std::size_t epoch) {
  Tensor x = data.batch(positions);
  if (augment_spec.kind == AugmentKind::none) return x;
  for (std::size_t r = 0; r < positions.size(); ++r) {
    std::span<double> row(x.values().data() + r * x.cols(), x.cols());
    augment(row, data.image(), augment_spec, seed, data.id(positions[r]), epoch);
  }
  return x;
}

std::vector<std::size_t> to_vector(std::span<const std::size_t> s) { return {s.begin(), s.end()}; }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf, end);
}

double accuracy(const ClassifierSpec& spec, const ModelParams& params, const Dataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> positions;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    positions.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + kEvalChunk); ++i) positions.push_back(i);
    const Prediction p = classifier_predict(spec, params, data.batch(positions));
    const auto labels = data.batch_labels(positions);
    correct += labels.size() - select_error_subset(p.probs, labels).size();
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TeacherResult train_teacher(const RunConfig& config, const Datasets& data, std::ostream& metrics,
                            const std::atomic<bool>* stop) {
  const ClassifierSpec spec = make_spec(config.teacher, data.train);
  std::mt19937_64 rng(mix_seed(config.seed, kTeacherInit));
  TeacherResult result;
  result.params = init_classifier(spec, rng);
  Sgd sgd(config.teacher.sgd);
  const Batcher batcher(data.train.size(), config.batch_size, mix_seed(config.seed, kTeacherBatches));

  metrics << kTeacherMetricsHeader << '\n';
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < config.teacher.epochs; ++epoch) {
    const double lr = config.teacher.sgd.lr_at(epoch);
    const auto batches = batcher.epoch(epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      ++iteration;
      const Tensor x = batch_inputs(data.train, batches[b], config.data.augment, mix_seed(config.seed, kAugment), epoch);
      const auto labels = data.train.batch_labels(batches[b]);
      ad::Tape tape;
      const auto vars = result.params.bind(tape, true);
      const PredictionVars pred = classifier_forward(spec, vars, tape.constant(x));
      const ad::Var loss = ad::mean(cross_entropy_from_probs(pred.probs, labels));
      sgd.step(result.params, ad::grad_values(loss, vars), lr);

      metrics << iteration << ',' << epoch + 1 << ',' << format_double(loss.value().item()) << ',';
      if (b + 1 == batches.size()) {
        result.eval_acc = accuracy(spec, result.params, data.eval);
        metrics << format_double(result.eval_acc);
        log::info("teacher epoch " + std::to_string(epoch + 1) + " eval_acc " + format_double(result.eval_acc));
      }
      metrics << '\n';
      if (stop && stop->load()) {
        result.interrupted = true;
        return result;
      }
    }
  }
  if (config.teacher.epochs == 0) result.eval_acc = accuracy(spec, result.params, data.eval);
  return result;
}

ModelParams DistillState::to_params() const {
  ModelParams p;
  p.append(student.prefixed("student."));
  p.append(projector.prefixed("projector."));
  p.append(metanet.prefixed("metanet."));
  p.append(store.to_params().prefixed("store."));
  p.append(student_optimizer.prefixed("opt.student."));
  p.append(projector_optimizer.prefixed("opt.projector."));
  p.append(meta_optimizer.prefixed("opt.metanet."));
  p.add("state.epoch", Tensor::scalar(static_cast<double>(epoch)));
  p.add("state.iteration", Tensor::scalar(static_cast<double>(iteration)));
  return p;
}

DistillState DistillState::from_params(const ModelParams& p) {
  DistillState s;
  s.student = p.extract("student.");
  s.projector = p.extract("projector.");
  s.metanet = p.extract("metanet.");
  s.store = WeightStore::from_params(p.extract("store."));
  s.student_optimizer = p.extract("opt.student.");
  s.projector_optimizer = p.extract("opt.projector.");
  s.meta_optimizer = p.extract("opt.metanet.");
  s.epoch = static_cast<std::size_t>(p.at("state.epoch").item());
  s.iteration = static_cast<std::size_t>(p.at("state.iteration").item());
  return s;
}

DistillResult distill(const RunConfig& config, const ModelParams& teacher, const Datasets& data,
                      const DistillSinks& sinks) {
  const ClassifierSpec teacher_spec = make_spec(config.teacher, data.train);
  {
    std::mt19937_64 probe(0);
    if (!init_classifier(teacher_spec, probe).same_layout(teacher))
      throw ConfigError("teacher checkpoint does not match the [teacher] architecture in the config");
  }
  DistillSettings settings;
  settings.student = make_spec(config.student, data.train);
  settings.meta = config.meta;
  settings.meta.classes = data.train.classes();
  settings.ensemble = config.ensemble;
  settings.temperature = config.temperature;
  settings.meta_target = config.meta_target;
  if (uses_metanet(config.mode) && data.meta.empty())
    throw ConfigError("data.meta_per_class: mode " + std::string(mode_name(config.mode)) + " needs a meta set");

  DistillResult result;
  DistillState& st = result.state;
  {
    std::mt19937_64 rs(mix_seed(config.seed, kStudentInit));
    st.student = init_classifier(settings.student, rs);
    std::mt19937_64 rp(mix_seed(config.seed, kProjectorInit));
    st.projector = init_projector(settings.student.feature_dim(), teacher_spec.feature_dim(), rp);
    std::mt19937_64 rm(mix_seed(config.seed, kMetanetInit));
    st.metanet = init_metanet(settings.meta, rm);
  }
  Sgd student_opt(config.student.sgd), projector_opt(config.student.sgd);
  Adam meta_opt(config.meta_optimizer);
  const std::uint64_t augment_seed = mix_seed(config.seed, kAugment);
  const bool augmenting = config.data.augment.kind != AugmentKind::none;

  std::optional<Prediction> teacher_cache;
  if (!augmenting) teacher_cache = classifier_predict(teacher_spec, teacher, data.train.all_features());
  const MetaSet meta_set{data.meta.empty() ? Tensor(1, 1) : data.meta.all_features(), to_vector(data.meta.labels())};

  const Batcher batcher(data.train.size(), config.batch_size, mix_seed(config.seed, kStudentBatches));
  if (sinks.metrics) *sinks.metrics << kMetricsHeader << '\n';
  if (sinks.weights) *sinks.weights << kWeightsHeader << '\n';

  auto snapshot = [&] {
    st.student_optimizer = student_opt.state();
    st.projector_optimizer = projector_opt.state();
    st.meta_optimizer = meta_opt.state();
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.student.sgd.lr_at(epoch);
    const auto batches = batcher.epoch(epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& positions = batches[b];
      ++st.iteration;

      Batch batch;
      batch.x = batch_inputs(data.train, positions, config.data.augment, augment_seed, epoch);
      batch.labels = data.train.batch_labels(positions);
      for (std::size_t p : positions) batch.ids.push_back(data.train.id(p));
      if (teacher_cache) {
        batch.teacher_probs = gather(teacher_cache->probs, positions);
        batch.teacher_feature = gather(teacher_cache->feature, positions);
      } else {
        const Prediction tp = classifier_predict(teacher_spec, teacher, batch.x);
        batch.teacher_probs = tp.probs;
        batch.teacher_feature = tp.feature;
      }

      std::optional<MetaStepResult> meta;
      if (uses_metanet(config.mode) && st.iteration % config.interval == 0) {
        meta = meta_step(settings, st.student, st.projector, st.metanet, meta_opt, batch, meta_set, lr);
        if (!meta->loss) log::debug("iteration " + std::to_string(st.iteration) + ": empty error subset, meta step skipped");
      }
      const OuterStepResult outer = outer_step(config.mode, settings, st.student, st.projector, st.metanet, &st.store,
                                               student_opt, projector_opt, batch, lr, epoch);
      result.weight_min = std::min(result.weight_min, outer.weights.min);
      result.weight_max = std::max(result.weight_max, outer.weights.max);
      if (sinks.after_step) sinks.after_step(st.iteration, st.student, st.projector);

      const bool epoch_end = b + 1 == batches.size();
      if (epoch_end) result.final_eval_acc = accuracy(settings.student, st.student, data.eval);

      if (sinks.metrics) {
        std::ostream& m = *sinks.metrics;
        m << st.iteration << ',' << epoch + 1 << ',' << format_double(outer.loss.ce) << ','
          << format_double(outer.loss.kd_van) << ',' << format_double(outer.loss.kd_aux) << ','
          << format_double(outer.loss.total) << ',' << format_double(outer.weights.beta_mean) << ','
          << format_double(outer.weights.gamma_mean) << ',';
        if (meta && meta->loss) m << format_double(*meta->loss);
        m << ',';
        if (meta) m << meta->subset.size();
        m << ',';
        if (epoch_end) m << format_double(result.final_eval_acc);
        m << '\n';
      }
      if (sinks.weights) {
        const WeightStats& w = outer.weights;
        *sinks.weights << epoch + 1 << ',' << st.iteration << ',' << format_double(w.beta_mean) << ','
                       << format_double(w.beta_std) << ',' << format_double(w.gamma_mean) << ','
                       << format_double(w.gamma_std) << ',' << format_double(w.frac_low_uncertainty) << '\n';
      }
      if (sinks.stop && sinks.stop->load()) {
        result.interrupted = true;
        snapshot();
        if (sinks.checkpoint) sinks.checkpoint(st, false);
        log::warn("interrupted at iteration " + std::to_string(st.iteration));
        return result;
      }
    }
    st.epoch = epoch + 1;
    const bool best = result.final_eval_acc > result.best_eval_acc || epoch == 0;
    if (best) result.best_eval_acc = result.final_eval_acc;
    log::info(std::string(mode_name(config.mode)) + " epoch " + std::to_string(epoch + 1) + " eval_acc " +
              format_double(result.final_eval_acc));
    snapshot();
    if (sinks.checkpoint) sinks.checkpoint(st, best);
  }
  snapshot();
  if (config.epochs == 0) result.final_eval_acc = result.best_eval_acc = accuracy(settings.student, st.student, data.eval);
  return result;
}

}  // namespace hkd
