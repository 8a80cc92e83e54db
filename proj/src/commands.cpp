// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/commands.hpp"

#include <cmath>
#include <fstream>
#include <algorithm>
#include <map>
#include <sstream>
#include <vector>

#include "hkd/error.hpp"
#include "hkd/log.hpp"

#ifndef HKD_VERSION_TAG
#define HKD_VERSION_TAG "hkd-unknown"
#endif

namespace hkd {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  return kExitOther;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

RunConfig resolve_config(const CommandOptions& options) {
  if (options.config.empty()) throw ConfigError("--config is required");
  RunConfig config = load_config(options.config);
  if (options.seed) config.seed = *options.seed;
  if (options.mode) config.mode = parse_mode(*options.mode);
  config.validate();
  return config;
}

namespace {

void prepare_out(const fs::path& out) {
  if (out.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create run directory " + out.string() + ": " + ec.message());
}

void write_run_files(const fs::path& out, const RunConfig& config, const std::string& command,
                     const std::string& extra = "") {
  write_file_atomic(out / "config.ini", config.text);
  std::ostringstream run;
  run << "[run]\n"
      << "command = " << command << "\n"
      << "version = " << HKD_VERSION_TAG << "\n"
      << "seed = " << config.seed << "\n"
      << "data_seed = " << config.data_seed() << "\n"
      << "mode = " << mode_name(config.mode) << "\n"
      << extra;
  write_file_atomic(out / "run.ini", run.str());
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

}  // namespace

TeacherResult cmd_train_teacher(const CommandOptions& options) {
  const RunConfig config = resolve_config(options);
  prepare_out(options.out);
  write_run_files(options.out, config, "train-teacher");
  const Datasets data = load_datasets(config);
  log::info("teacher: " + std::to_string(data.train.size()) + " train, " + std::to_string(data.eval.size()) +
            " eval samples");

  std::ofstream metrics = open_csv(options.out / "metrics.csv");
  TeacherResult r = train_teacher(config, data, metrics, options.stop);
  metrics.close();
  if (!metrics) throw IoError("error writing metrics.csv");
  save_checkpoint(options.out / "teacher.ckpt", r.params);
  log::info("teacher eval accuracy " + format_double(r.eval_acc));
  return r;
}

DistillResult cmd_distill(const CommandOptions& options) {
  if (options.teacher.empty()) throw ConfigError("--teacher is required");
  const RunConfig config = resolve_config(options);
  if (!fs::exists(options.teacher)) throw IoError("teacher checkpoint not found: " + options.teacher.string());
  const ModelParams teacher = load_checkpoint(options.teacher);
  prepare_out(options.out);
  write_run_files(options.out, config, "distill", "teacher = " + options.teacher.string() + "\n");
  const Datasets data = load_datasets(config);

  std::ofstream metrics = open_csv(options.out / "metrics.csv");
  std::ofstream weights = open_csv(options.out / "weights.csv");
  DistillSinks sinks;
  sinks.metrics = &metrics;
  sinks.weights = &weights;
  sinks.stop = options.stop;
  sinks.checkpoint = [&](const DistillState& state, bool best) {
    metrics.flush();
    weights.flush();
    const ModelParams p = state.to_params();
    save_checkpoint(options.out / "checkpoint.ckpt", p);
    if (best) save_checkpoint(options.out / "best.ckpt", p);
  };
  DistillResult r = distill(config, teacher, data, sinks);
  metrics.close();
  weights.close();
  if (!metrics || !weights) throw IoError("error writing CSV output");
  save_checkpoint(options.out / "student.ckpt", r.state.student);

  std::ostringstream result;
  result << "[result]\n"
         << "final_eval_acc = " << format_double(r.final_eval_acc) << "\n"
         << "best_eval_acc = " << format_double(r.best_eval_acc) << "\n"
         << "weight_min = " << format_double(r.weight_min) << "\n"
         << "weight_max = " << format_double(r.weight_max) << "\n"
         << "epochs = " << r.state.epoch << "\n"
         << "iterations = " << r.state.iteration << "\n"
         << "interrupted = " << (r.interrupted ? "true" : "false") << "\n";
  write_file_atomic(options.out / "result.ini", result.str());
  log::info(std::string(mode_name(config.mode)) + " final eval accuracy " + format_double(r.final_eval_acc));
  return r;
}

namespace {

struct WeightRow {
  std::size_t epoch = 0, iteration = 0;
  double beta_mean = 0, beta_std = 0, gamma_mean = 0, gamma_std = 0, frac = 0;
};

double parse_number(const std::string& s, const fs::path& file, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty())
    throw ParseError(file.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

std::vector<WeightRow> read_weights(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != kWeightsHeader)
    throw ParseError(file.string() + ": header is not '" + std::string(kWeightsHeader) + "'");
  std::vector<WeightRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw ParseError(file.string() + ":" + std::to_string(n) + ": expected 7 fields");
    WeightRow r;
    r.epoch = static_cast<std::size_t>(parse_number(f[0], file, n));
    r.iteration = static_cast<std::size_t>(parse_number(f[1], file, n));
    r.beta_mean = parse_number(f[2], file, n);
    r.beta_std = parse_number(f[3], file, n);
    r.gamma_mean = parse_number(f[4], file, n);
    r.gamma_std = parse_number(f[5], file, n);
    r.frac = parse_number(f[6], file, n);
    rows.push_back(r);
  }
  return rows;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

CurveSummary cmd_export_curves(const fs::path& run_dir) {
  const fs::path file = run_dir / "weights.csv";
  if (!fs::is_regular_file(file))
    throw IoError("no weights.csv in " + run_dir.string() +
                  "; expected a distill run directory with config.ini, run.ini, metrics.csv, weights.csv");
  const std::vector<WeightRow> rows = read_weights(file);
  if (rows.empty()) throw ParseError(file.string() + ": no rows");

  std::ostringstream iter;
  iter << "iteration,epoch,beta_mean,gamma_mean\n";
  for (const WeightRow& r : rows)
    iter << r.iteration << ',' << r.epoch << ',' << format_double(r.beta_mean) << ',' << format_double(r.gamma_mean)
         << '\n';
  write_file_atomic(run_dir / "curves_iteration.csv", iter.str());

  std::map<std::size_t, std::vector<const WeightRow*>> by_epoch;
  for (const WeightRow& r : rows) by_epoch[r.epoch].push_back(&r);

  std::ostringstream ep;
  ep << "epoch,iterations,beta_mean,beta_std,gamma_mean,gamma_std,frac_low_uncertainty\n";
  std::vector<double> beta_means, gamma_means;
  for (const auto& [epoch, group] : by_epoch) {
    std::vector<double> b, g, f;
    for (const WeightRow* r : group) {
      b.push_back(r->beta_mean);
      g.push_back(r->gamma_mean);
      f.push_back(r->frac);
    }
    beta_means.push_back(mean_of(b));
    gamma_means.push_back(mean_of(g));
    ep << epoch << ',' << group.size() << ',' << format_double(beta_means.back()) << ',' << format_double(std_of(b))
       << ',' << format_double(gamma_means.back()) << ',' << format_double(std_of(g)) << ','
       << format_double(mean_of(f)) << '\n';
  }
  write_file_atomic(run_dir / "curves_epoch.csv", ep.str());

  CurveSummary s;
  s.iterations = rows.size();
  s.epochs = by_epoch.size();
  auto [bmin, bmax] = std::minmax_element(beta_means.begin(), beta_means.end());
  auto [gmin, gmax] = std::minmax_element(gamma_means.begin(), gamma_means.end());
  s.beta_min = *bmin;
  s.beta_max = *bmax;
  s.gamma_min = *gmin;
  s.gamma_max = *gmax;
  s.beta_epoch_std = std_of(beta_means);
  s.gamma_epoch_std = std_of(gamma_means);
  return s;
}

bool cmd_gradcheck(const SuiteOptions& options, std::ostream& report) {
  const auto lines = run_gradcheck_suite(options);
  std::size_t failed = 0;
  for (const CheckLine& l : lines) {
    report << (l.passed() ? "PASS " : "FAIL ") << l.kind << ' ' << l.name << " max_rel_error=" << format_double(l.max_rel_error)
           << " tolerance=" << format_double(l.threshold) << '\n';
    if (!l.passed()) ++failed;
  }
  report << "gradcheck: " << lines.size() << " checks, " << failed << " failed\n";
  return failed == 0;
}

}  // namespace hkd
