// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Define-by-run reverse-mode differentiation. Every backward rule is written
// in terms of the same differentiable ops, so with create_graph the returned
// gradients are themselves nodes on the tape and can be differentiated again.

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd::ad {

enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  matmul,
  transpose,
  relu,
  sigmoid,
  softmax,
  log,
  clamp_min,
  reciprocal,
  exp,
  sum,
  mean,
  fill,
  square,
  scale,
  add_scalar,
  gather_rows,
  scatter_rows,
  concat_cols,
  slice_cols,
  embed_cols,
  pick,
  scatter_pick,
  sum_rows,
  broadcast_cols,
  reshape,
  im2col,
  col2im,
};

std::string_view op_name(OpKind op);

/// Geometry of a batch of HWC images stored one image per row.
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch_size() const { return kernel * kernel * channels; }
};

/// Non-tensor operands of an op: a scalar, an index list, column offsets,
/// convolution geometry. Shared between a node and its backward nodes.
struct OpAttrs {
  double scalar = 0.0;
  std::shared_ptr<const std::vector<std::size_t>> index;
  std::size_t offset = 0;
  std::size_t extent = 0;
  Shape target;
  ConvGeometry conv;
};

class Tape;

/// Handle to a node of a tape. Cheap to copy; invalid once the tape is reset.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Shape shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const;
  std::uint32_t id() const { return id_; }
  bool valid() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id, std::uint64_t generation)
      : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
  std::uint64_t generation_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable input.
  Var parameter(Tensor value);
  /// A value with no gradient path.
  Var constant(Tensor value);

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }

  /// Drops every node; outstanding Vars become invalid.
  void reset();

  bool grad_enabled() const { return grad_enabled_; }

  /// Records an op. Exposed for the op functions below; not for general use.
  Var record(OpKind op, std::span<const Var> inputs, Tensor value, OpAttrs attrs = {});

 private:
  friend class Var;
  friend class NoGradGuard;
  friend std::vector<Var> grad(Var, std::span<const Var>, bool);

  struct Node {
    Tensor value;
    OpKind op = OpKind::leaf;
    std::uint8_t input_count = 0;
    std::uint32_t inputs[2] = {0, 0};
    bool requires_grad = false;
    OpAttrs attrs;
  };

  const Node& node(std::uint32_t id) const { return nodes_[id]; }
  Var handle(std::uint32_t id) { return Var(this, id, generation_); }

  std::deque<Node> nodes_;
  std::uint64_t generation_ = 1;
  bool grad_enabled_ = true;
};

/// While alive, new nodes on the tape do not require gradients.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), previous_(tape.grad_enabled_) {
    tape_.grad_enabled_ = false;
  }
  ~NoGradGuard() { tape_.grad_enabled_ = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool previous_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var relu(Var a);
Var sigmoid(Var a);
/// Row-wise, with the row maximum subtracted before exponentiation.
Var softmax(Var a);
/// Natural log. With floor > 0 the input is clamped from below first and the
/// gradient vanishes where the clamp is active.
Var log(Var a, double floor = 0.0);
Var clamp_min(Var a, double floor);
Var reciprocal(Var a);
Var exp(Var a);
/// Sum of all elements, 1 x 1.
Var sum(Var a);
Var mean(Var a);
/// Broadcasts a 1 x 1 tensor to `shape`.
Var fill(Var scalar, Shape shape);
Var square(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var gather_rows(Var a, std::vector<std::size_t> rows);
/// Inverse of gather_rows: rows of `a` are added into a zero tensor of `rows` rows.
Var scatter_rows(Var a, std::shared_ptr<const std::vector<std::size_t>> index, std::size_t rows);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t start, std::size_t count);
/// Places `a` at column `start` of a zero tensor with `total` columns.
Var embed_cols(Var a, std::size_t start, std::size_t total);
/// out[i] = a[i, index[i]], n x 1.
Var pick(Var a, std::vector<std::size_t> index);
Var scatter_pick(Var a, std::shared_ptr<const std::vector<std::size_t>> index, std::size_t cols);
/// Row sums, n x 1.
Var sum_rows(Var a);
/// Repeats an n x 1 column `cols` times.
Var broadcast_cols(Var a, std::size_t cols);
Var reshape(Var a, Shape shape);
/// Patches of HWC images: (batch*oh*ow) x (k*k*channels).
Var im2col(Var images, const ConvGeometry& geometry);
Var col2im(Var columns, const ConvGeometry& geometry);

/// Generic entry point over the element-level op kinds that need no extra
/// operands (add, sub, mul, matmul, transpose, relu, sigmoid, softmax, log,
/// exp, sum, mean, square, concat).
Var apply(OpKind op, std::span<const Var> inputs);

/// d(output)/d(wrt[i]). output must be 1 x 1 and every wrt must live on the
/// same tape at or before output. With create_graph the results are
/// differentiable nodes; otherwise they are constants.
std::vector<Var> grad(Var output, std::span<const Var> wrt, bool create_graph = false);

/// grad() with the results copied out as plain tensors.
std::vector<Tensor> grad_values(Var output, std::span<const Var> wrt);

}  // namespace hkd::ad
