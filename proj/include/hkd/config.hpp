// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hkd/data.hpp"
#include "hkd/ensembler.hpp"
#include "hkd/losses.hpp"
#include "hkd/meta_loop.hpp"
#include "hkd/models.hpp"
#include "hkd/optim.hpp"

namespace hkd {

struct DataConfig {
  /// synthetic | raw | png-dir | file
  std::string source = "synthetic";
  GaussianSpec gaussian;
  /// Seed of the synthetic data; the run seed when unset.
  std::optional<std::uint64_t> seed;
  std::size_t eval_per_class = 100;
  std::size_t meta_per_class = 10;
  std::string path;
  std::string eval_path;
  RawImageFormat image;
  AugmentSpec augment;
};

struct ModelConfig {
  std::vector<std::size_t> hidden;
  std::size_t feature_tap = 0;
  std::vector<std::size_t> conv_channels;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  SgdConfig sgd;
  std::size_t epochs = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Mode mode = Mode::hkd;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double temperature = 1.0;

  DataConfig data;
  ModelConfig teacher;
  ModelConfig student;

  MetaNetConfig meta;
  std::size_t interval = 100;
  AdamConfig meta_optimizer;
  MetaTarget meta_target = MetaTarget::true_class;
  EnsembleConfig ensemble;

  /// The text the config was parsed from, kept for the run directory.
  std::string text;

  std::uint64_t data_seed() const { return data.seed.value_or(seed); }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

struct Datasets {
  Dataset train;
  Dataset meta;
  Dataset eval;
};

/// Loads or generates the data named by the config and holds out the meta set.
Datasets load_datasets(const RunConfig& config);

ClassifierSpec make_spec(const ModelConfig& model, const Dataset& data);

}  // namespace hkd
