// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "hkd/check_suite.hpp"
#include "hkd/trainer.hpp"

namespace hkd {

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumerical = 4,
  kExitCheckFailed = 5,
  kExitInterrupted = 130,
};

/// Maps an exception escaping a command to the process exit code.
int exit_code_for(const std::exception& e);

struct CommandOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::filesystem::path teacher;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  const std::atomic<bool>* stop = nullptr;
};

/// The config file with the command-line overrides applied, validated.
RunConfig resolve_config(const CommandOptions& options);

/// Trains the teacher. Run directory: config.ini, run.ini, metrics.csv, teacher.ckpt.
TeacherResult cmd_train_teacher(const CommandOptions& options);

/// Distills into a student. Run directory: config.ini, run.ini, metrics.csv,
/// weights.csv, checkpoint.ckpt (every epoch), best.ckpt, student.ckpt, result.ini.
DistillResult cmd_distill(const CommandOptions& options);

struct CurveSummary {
  std::size_t iterations = 0;
  std::size_t epochs = 0;
  double beta_min = 0.0, beta_max = 0.0, beta_epoch_std = 0.0;
  double gamma_min = 0.0, gamma_max = 0.0, gamma_epoch_std = 0.0;
};

/// Reads weights.csv of a distill run, writes curves_iteration.csv and
/// curves_epoch.csv next to it. Epoch rows hold the mean of the batch means
/// and the std of the batch means within the epoch.
CurveSummary cmd_export_curves(const std::filesystem::path& run_dir);

/// Prints one line per check; returns true when all pass.
bool cmd_gradcheck(const SuiteOptions& options, std::ostream& report);

/// Writes `text` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace hkd
