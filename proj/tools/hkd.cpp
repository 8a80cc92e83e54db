// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

// hkd: teacher training, distillation, curve export and gradient checks.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "hkd/commands.hpp"
#include "hkd/log.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_sigint(int) { g_stop.store(true); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hint-dynamic knowledge distillation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", HKD_VERSION_TAG);

  hkd::CommandOptions opts;
  opts.stop = &g_stop;
  std::uint64_t seed = 0;
  std::string mode;

  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "INI config file")->required();
    sub->add_option("--out", opts.out, "run directory")->required();
    sub->add_option("--seed", seed, "override [run] seed");
  };

  auto* teacher = app.add_subcommand("train-teacher", "train the teacher with cross-entropy");
  add_run_flags(teacher);

  auto* distill = app.add_subcommand("distill", "distill a student from a trained teacher");
  add_run_flags(distill);
  distill->add_option("--teacher", opts.teacher, "teacher checkpoint")->required();
  distill->add_option("--mode", mode, "static | un-dy | mwn | hkd");

  std::string run_dir;
  auto* curves = app.add_subcommand("export-curves", "per-iteration and per-epoch weight curves of a run");
  curves->add_option("run_dir", run_dir, "distill run directory")->required();

  hkd::SuiteOptions suite;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every op and the hypergradient");
  gradcheck->add_option("--seed", suite.seed, "first seed");
  gradcheck->add_option("--seeds", suite.seeds, "number of seeds")->check(CLI::PositiveNumber);
  gradcheck->add_option("--corrupt", suite.corrupt, "scale this check's analytic gradient by 1.01");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : hkd::kExitConfig;
  }
  for (auto* sub : {teacher, distill})
    if (sub->count("--seed") > 0) opts.seed = seed;
  if (distill->count("--mode") > 0) opts.mode = mode;

  std::signal(SIGINT, on_sigint);
  try {
    if (*teacher) {
      const auto r = hkd::cmd_train_teacher(opts);
      std::cout << "eval_acc " << hkd::format_double(r.eval_acc) << '\n';
      return r.interrupted ? hkd::kExitInterrupted : hkd::kExitOk;
    }
    if (*distill) {
      const auto r = hkd::cmd_distill(opts);
      std::cout << "final_eval_acc " << hkd::format_double(r.final_eval_acc) << '\n'
                << "best_eval_acc " << hkd::format_double(r.best_eval_acc) << '\n';
      return r.interrupted ? hkd::kExitInterrupted : hkd::kExitOk;
    }
    if (*curves) {
      const auto s = hkd::cmd_export_curves(run_dir);
      std::cout << "iterations " << s.iterations << "\nepochs " << s.epochs << "\nbeta_epoch_mean_range "
                << hkd::format_double(s.beta_min) << ' ' << hkd::format_double(s.beta_max)
                << "\nbeta_epoch_std " << hkd::format_double(s.beta_epoch_std) << "\ngamma_epoch_mean_range "
                << hkd::format_double(s.gamma_min) << ' ' << hkd::format_double(s.gamma_max)
                << "\ngamma_epoch_std " << hkd::format_double(s.gamma_epoch_std) << '\n';
      return hkd::kExitOk;
    }
    if (*gradcheck) {
      if (suite.corrupt.empty())
        if (const char* env = std::getenv("HKD_GRADCHECK_CORRUPT")) suite.corrupt = env;
      if (!hkd::cmd_gradcheck(suite, std::cout)) {
        hkd::log::error("gradient check failed");
        return hkd::kExitCheckFailed;
      }
      return hkd::kExitOk;
    }
  } catch (const std::exception& e) {
    hkd::log::error(e.what());
    return hkd::exit_code_for(e);
  }
  return hkd::kExitOther;
}
