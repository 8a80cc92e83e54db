// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "hkd/commands.hpp"
#include "hkd/error.hpp"

using namespace hkd;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"([run]
seed = 5
mode = hkd
epochs = 2
batch_size = 16

[data]
source = synthetic
classes = 3
dim = 6
train_per_class = 40
separation = 3
eval_per_class = 10
meta_per_class = 4

[teacher]
hidden = 16
feature_tap = 0
epochs = 2

[student]
hidden = 8

[meta]
hidden = 8
interval = 3
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hkd_cmd_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "in.ini";
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  REQUIRE(at != std::string::npos);
  return s.replace(at, from.size(), to);
}

}  // namespace

TEST_CASE("teacher with zero epochs writes the initial model and a header-only metrics file") {
  const fs::path dir = scratch("t0");
  CommandOptions o;
  o.config = write_config(dir, replace(kSmall, "epochs = 2\n\n[student]", "epochs = 0\n\n[student]"));
  o.out = dir / "run";
  cmd_train_teacher(o);
  CHECK(slurp(o.out / "metrics.csv") == std::string(kTeacherMetricsHeader) + "\n");
  const RunConfig c = resolve_config(o);
  const Datasets data = load_datasets(c);
  std::mt19937_64 rng(mix_seed(c.seed, 1));
  CHECK(load_checkpoint(o.out / "teacher.ckpt") == init_classifier(make_spec(c.teacher, data.train), rng));
}

TEST_CASE("run directory holds the verbatim config, seed and version tag") {
  const fs::path dir = scratch("layout");
  CommandOptions o;
  o.config = write_config(dir, kSmall);
  o.out = dir / "run";
  o.seed = 11;
  cmd_train_teacher(o);
  CHECK(slurp(o.out / "config.ini") == kSmall);
  const std::string run = slurp(o.out / "run.ini");
  CHECK(run.find("seed = 11\n") != std::string::npos);
  CHECK(run.find("version = hkd-") != std::string::npos);
  CHECK(run.find("command = train-teacher\n") != std::string::npos);
}

TEST_CASE("two-class teacher reaches 90% eval accuracy in 50 epochs") {
  const fs::path dir = scratch("twoclass");
  std::string text = replace(kSmall, "classes = 3", "classes = 2");
  text = replace(text, "epochs = 2\n\n[student]", "epochs = 50\n\n[student]");
  text = replace(text, "eval_per_class = 10", "eval_per_class = 100");
  CommandOptions o;
  o.config = write_config(dir, text);
  o.out = dir / "run";
  CHECK(cmd_train_teacher(o).eval_acc > 0.9);
}

TEST_CASE("same seed gives identical checkpoint and CSV bytes") {
  const fs::path dir = scratch("repeat");
  CommandOptions o;
  o.config = write_config(dir, kSmall);
  for (const char* run : {"a", "b"}) {
    o.out = dir / run / "teacher";
    o.teacher.clear();
    cmd_train_teacher(o);
    o.teacher = o.out / "teacher.ckpt";
    o.out = dir / run / "student";
    cmd_distill(o);
  }
  for (const char* f : {"teacher/teacher.ckpt", "teacher/metrics.csv", "student/metrics.csv", "student/weights.csv",
                        "student/checkpoint.ckpt", "student/student.ckpt", "student/best.ckpt"})
    CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
  CHECK_FALSE(slurp(dir / "a/student/student.ckpt").empty());
}

TEST_CASE("distill error paths") {
  const fs::path dir = scratch("errors");
  CommandOptions o;
  o.config = write_config(dir, kSmall);
  o.out = dir / "run";
  CHECK_THROWS_AS(cmd_distill(o), ConfigError);
  o.teacher = dir / "missing.ckpt";
  try {
    cmd_distill(o);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(exit_code_for(e) == kExitIo);
    CHECK(std::string(e.what()).find("missing.ckpt") != std::string::npos);
  }

  // A teacher trained with another architecture.
  CommandOptions t = o;
  t.config = write_config(dir, replace(kSmall, "hidden = 16", "hidden = 12"));
  t.out = dir / "other";
  cmd_train_teacher(t);
  o.config = write_config(dir, kSmall);
  o.teacher = t.out / "teacher.ckpt";
  try {
    cmd_distill(o);
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(exit_code_for(e) == kExitConfig);
  }

  o.mode = "fancy";
  CHECK_THROWS_AS(cmd_distill(o), ConfigError);
}

TEST_CASE("checkpoint state round-trips and records the final position") {
  const fs::path dir = scratch("state");
  CommandOptions o;
  o.config = write_config(dir, kSmall);
  o.out = dir / "teacher";
  cmd_train_teacher(o);
  o.teacher = o.out / "teacher.ckpt";
  o.out = dir / "student";
  const DistillResult r = cmd_distill(o);
  const DistillState s = DistillState::from_params(load_checkpoint(o.out / "checkpoint.ckpt"));
  CHECK(s.epoch == 2);
  CHECK(s.iteration == r.state.iteration);
  CHECK(s.student == r.state.student);
  CHECK(s.store == r.state.store);
  CHECK(s.to_params() == r.state.to_params());
  CHECK(load_checkpoint(o.out / "student.ckpt") == r.state.student);
  CHECK(slurp(o.out / "result.ini").find("interrupted = false") != std::string::npos);
}

TEST_CASE("a stop request ends the run with a checkpoint") {
  const fs::path dir = scratch("stop");
  CommandOptions o;
  o.config = write_config(dir, kSmall);
  o.out = dir / "teacher";
  cmd_train_teacher(o);
  o.teacher = o.out / "teacher.ckpt";
  o.out = dir / "student";
  std::atomic<bool> stop{true};
  o.stop = &stop;
  const DistillResult r = cmd_distill(o);
  CHECK(r.interrupted);
  CHECK(fs::exists(o.out / "checkpoint.ckpt"));
  CHECK(slurp(o.out / "result.ini").find("interrupted = true") != std::string::npos);
}

TEST_CASE("curve export") {
  const fs::path dir = scratch("curves");
  CommandOptions o;
  o.config = write_config(dir, kSmall);
  o.out = dir / "teacher";
  cmd_train_teacher(o);
  o.teacher = o.out / "teacher.ckpt";

  SUBCASE("static run gives constant curves at 1") {
    o.mode = "static";
    o.out = dir / "static";
    cmd_distill(o);
    const CurveSummary s = cmd_export_curves(o.out);
    CHECK(s.epochs == 2);
    CHECK(s.beta_min == 1.0);
    CHECK(s.beta_max == 1.0);
    CHECK(s.gamma_min == 1.0);
    CHECK(s.gamma_max == 1.0);
    CHECK(s.beta_epoch_std == 0.0);
    std::istringstream epoch(slurp(o.out / "curves_epoch.csv"));
    std::string line;
    std::getline(epoch, line);
    CHECK(line == "epoch,iterations,beta_mean,beta_std,gamma_mean,gamma_std,frac_low_uncertainty");
    while (std::getline(epoch, line)) CHECK(line.find(",1,0,1,0,") != std::string::npos);
    CHECK(s.iterations + 1 == static_cast<std::size_t>(std::count(
                                  std::istreambuf_iterator<char>(*std::make_unique<std::ifstream>(o.out / "curves_iteration.csv")),
                                  std::istreambuf_iterator<char>(), '\n')));
  }
  SUBCASE("empty directory names the expected files") {
    const fs::path empty = scratch("curves_empty");
    try {
      cmd_export_curves(empty);
      FAIL("expected an error");
    } catch (const IoError& e) {
      const std::string msg = e.what();
      for (const char* f : {"weights.csv", "metrics.csv", "config.ini", "run.ini"})
        CHECK(msg.find(f) != std::string::npos);
    }
  }
  SUBCASE("malformed weights file") {
    const fs::path bad = scratch("curves_bad");
    std::ofstream(bad / "weights.csv") << kWeightsHeader << "\n1,1,x,0,1,0,0\n";
    CHECK_THROWS_AS(cmd_export_curves(bad), ParseError);
  }
}

TEST_CASE("gradcheck report is deterministic and a corrupted op is named") {
  SuiteOptions s;
  s.seeds = 2;
  std::ostringstream a, b;
  CHECK(cmd_gradcheck(s, a));
  CHECK(cmd_gradcheck(s, b));
  CHECK(a.str() == b.str());

  s.corrupt = "matmul";
  std::ostringstream c;
  CHECK_FALSE(cmd_gradcheck(s, c));
  CHECK(c.str().find("FAIL first-order matmul") != std::string::npos);
  CHECK(c.str().find("FAIL first-order add ") == std::string::npos);

  s.corrupt = "no_such_op";
  std::ostringstream d;
  CHECK_THROWS_AS(cmd_gradcheck(s, d), ConfigError);
}

TEST_CASE("exit codes are distinct per error class") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(IoError("x")) == 3);
  CHECK(exit_code_for(ParseError("x")) == 3);
  CHECK(exit_code_for(NumericalError("x")) == 4);
  CHECK(exit_code_for(ContractError("x")) == 1);
  CHECK(kExitCheckFailed == 5);
}
