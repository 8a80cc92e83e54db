// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hkd/autodiff.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

/// Ordered, named parameter tensors. Forward functions take the bound Vars
/// in this order.
class ModelParams {
 public:
  void add(std::string name, Tensor value);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  const Tensor& operator[](std::size_t i) const { return entries_[i].second; }
  Tensor& operator[](std::size_t i) { return entries_[i].second; }

  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  /// Total scalar count.
  std::size_t count() const;

  /// Puts every tensor on the tape, as parameters or as constants.
  std::vector<ad::Var> bind(ad::Tape& tape, bool differentiable) const;

  std::vector<Tensor> tensors() const;
  /// Replaces values in order; shapes must match.
  void assign(std::span<const Tensor> values);

  /// Same names and shapes, values ignored.
  bool same_layout(const ModelParams& other) const;

  /// Copy with every name prefixed.
  ModelParams prefixed(std::string_view prefix) const;
  /// Entries whose name starts with prefix, prefix removed.
  ModelParams extract(std::string_view prefix) const;
  void append(const ModelParams& other);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Checkpoint file, little-endian:
//   "HKDCKPT\0"  u32 version(=1)  u32 count
//   count x { u32 name_len, name bytes, u64 rows, u64 cols, rows*cols f64 }
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(std::string_view bytes);

}  // namespace hkd
