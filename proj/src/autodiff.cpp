// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "hkd/error.hpp"
#include "hkd/kernels.hpp"

namespace hkd::ad {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax: return "softmax";
    case OpKind::log: return "log";
    case OpKind::clamp_min: return "clamp_min";
    case OpKind::reciprocal: return "reciprocal";
    case OpKind::exp: return "exp";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::fill: return "fill";
    case OpKind::square: return "square";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::scatter_rows: return "scatter_rows";
    case OpKind::concat_cols: return "concat";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::embed_cols: return "embed_cols";
    case OpKind::pick: return "pick";
    case OpKind::scatter_pick: return "scatter_pick";
    case OpKind::sum_rows: return "sum_rows";
    case OpKind::broadcast_cols: return "broadcast_cols";
    case OpKind::reshape: return "reshape";
    case OpKind::im2col: return "im2col";
    case OpKind::col2im: return "col2im";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Var / Tape

bool Var::valid() const { return tape_ != nullptr && tape_->generation_ == generation_ && id_ < tape_->nodes_.size(); }

const Tensor& Var::value() const {
  if (!valid()) throw ContractError("use of a Var whose tape was reset or never set");
  return tape_->node(id_).value;
}

bool Var::requires_grad() const {
  if (!valid()) throw ContractError("use of a Var whose tape was reset or never set");
  return tape_->node(id_).requires_grad;
}

Tape& Var::tape() const {
  if (!valid()) throw ContractError("use of a Var whose tape was reset or never set");
  return *tape_;
}

Var Tape::parameter(Tensor value) {
  if (!value.all_finite()) throw NumericalError("parameter: non-finite value");
  nodes_.push_back(Node{std::move(value), OpKind::leaf, 0, {0, 0}, true, {}});
  return handle(static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("constant: non-finite value");
  nodes_.push_back(Node{std::move(value), OpKind::leaf, 0, {0, 0}, false, {}});
  return handle(static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::reset() {
  nodes_.clear();
  ++generation_;
  grad_enabled_ = true;
}

Var Tape::record(OpKind op, std::span<const Var> inputs, Tensor value, OpAttrs attrs) {
  if (!value.all_finite())
    throw NumericalError(std::string(op_name(op)) + ": non-finite output");
  Node n{std::move(value), op, static_cast<std::uint8_t>(inputs.size()), {0, 0}, false, std::move(attrs)};
  bool any = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (&inputs[i].tape() != this) throw ContractError(std::string(op_name(op)) + ": inputs from different tapes");
    n.inputs[i] = inputs[i].id();
    any = any || node(inputs[i].id()).requires_grad;
  }
  n.requires_grad = grad_enabled_ && any;
  nodes_.push_back(std::move(n));
  return handle(static_cast<std::uint32_t>(nodes_.size() - 1));
}

// ---------------------------------------------------------------------------
// Forward ops

namespace {

[[noreturn]] void shape_mismatch(std::string_view op, Shape a, Shape b) {
  throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) + " do not conform");
}

void require_same_shape(std::string_view op, Var a, Var b) {
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
}

void require_same_tape(std::string_view op, Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": inputs from different tapes");
}

Var record1(OpKind op, Var a, Tensor value, OpAttrs attrs = {}) {
  const Var in[1] = {a};
  return a.tape().record(op, in, std::move(value), std::move(attrs));
}

Var record2(OpKind op, Var a, Var b, Tensor value, OpAttrs attrs = {}) {
  require_same_tape(op_name(op), a, b);
  const Var in[2] = {a, b};
  return a.tape().record(op, in, std::move(value), std::move(attrs));
}

Var constant_like(Var ref, Tensor value) { return ref.tape().constant(std::move(value)); }

Tensor transpose_values(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

template <class F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

void check_index(std::string_view op, const std::vector<std::size_t>& index, std::size_t bound) {
  for (std::size_t i : index)
    if (i >= bound)
      throw ShapeError(std::string(op) + ": index " + std::to_string(i) + " out of range " + std::to_string(bound));
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape().rows, a.shape().cols);
  kernels::add(a.value().values(), b.value().values(), out.values());
  return record2(OpKind::add, a, b, std::move(out));
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape().rows, a.shape().cols);
  kernels::sub(a.value().values(), b.value().values(), out.values());
  return record2(OpKind::sub, a, b, std::move(out));
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape().rows, a.shape().cols);
  kernels::mul(a.value().values(), b.value().values(), out.values());
  return record2(OpKind::mul, a, b, std::move(out));
}

Var matmul(Var a, Var b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) shape_mismatch("matmul", sa, sb);
  Tensor out(sa.rows, sb.cols);
  kernels::gemm(a.value().values(), b.value().values(), out.values(), sa.rows, sa.cols, sb.cols);
  return record2(OpKind::matmul, a, b, std::move(out));
}

Var transpose(Var a) { return record1(OpKind::transpose, a, transpose_values(a.value())); }

Var relu(Var a) {
  return record1(OpKind::relu, a, map_values(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }));
}

Var sigmoid(Var a) {
  return record1(OpKind::sigmoid, a, map_values(a.value(), [](double v) {
                   if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                   const double e = std::exp(v);
                   return e / (1.0 + e);
                 }));
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row_values(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      out(r, c) = std::exp(row[c] - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= z;
  }
  return record1(OpKind::softmax, a, std::move(out));
}

Var log(Var a, double floor) {
  if (floor > 0.0) a = clamp_min(a, floor);
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] > 0.0)) throw NumericalError("log: non-positive input " + std::to_string(x[i]));
  return record1(OpKind::log, a, map_values(x, [](double v) { return std::log(v); }));
}

Var clamp_min(Var a, double floor) {
  OpAttrs attrs;
  attrs.scalar = floor;
  return record1(OpKind::clamp_min, a, map_values(a.value(), [floor](double v) { return v > floor ? v : floor; }),
                 std::move(attrs));
}

Var reciprocal(Var a) {
  return record1(OpKind::reciprocal, a, map_values(a.value(), [](double v) { return 1.0 / v; }));
}

Var exp(Var a) {
  return record1(OpKind::exp, a, map_values(a.value(), [](double v) { return std::exp(v); }));
}

Var sum(Var a) { return record1(OpKind::sum, a, Tensor::scalar(kernels::sum(a.value().values()))); }

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return record1(OpKind::mean, a, Tensor::scalar(kernels::sum(a.value().values()) / n));
}

Var fill(Var scalar, Shape shape) {
  if (scalar.shape() != Shape{1, 1}) shape_mismatch("fill", scalar.shape(), Shape{1, 1});
  OpAttrs attrs;
  attrs.target = shape;
  return record1(OpKind::fill, scalar, Tensor(shape.rows, shape.cols, scalar.value().item()), std::move(attrs));
}

Var square(Var a) {
  Tensor out(a.shape().rows, a.shape().cols);
  kernels::mul(a.value().values(), a.value().values(), out.values());
  return record1(OpKind::square, a, std::move(out));
}

Var scale(Var a, double factor) {
  Tensor out(a.shape().rows, a.shape().cols);
  kernels::scale(factor, a.value().values(), out.values());
  OpAttrs attrs;
  attrs.scalar = factor;
  return record1(OpKind::scale, a, std::move(out), std::move(attrs));
}

Var add_scalar(Var a, double offset) {
  OpAttrs attrs;
  attrs.scalar = offset;
  return record1(OpKind::add_scalar, a, map_values(a.value(), [offset](double v) { return v + offset; }),
                 std::move(attrs));
}

namespace {

Var gather_rows_shared(Var a, std::shared_ptr<const std::vector<std::size_t>> index) {
  const Tensor& x = a.value();
  check_index("gather_rows", *index, x.rows());
  if (index->empty()) throw ShapeError("gather_rows: empty index");
  Tensor out(index->size(), x.cols());
  for (std::size_t r = 0; r < index->size(); ++r) {
    const auto src = x.row_values((*index)[r]);
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * x.cols()));
  }
  OpAttrs attrs;
  attrs.index = std::move(index);
  return record1(OpKind::gather_rows, a, std::move(out), std::move(attrs));
}

Var pick_shared(Var a, std::shared_ptr<const std::vector<std::size_t>> index) {
  const Tensor& x = a.value();
  if (index->size() != x.rows())
    throw ShapeError("pick: " + std::to_string(index->size()) + " indices for " + to_string(x.shape()));
  check_index("pick", *index, x.cols());
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) out(r, 0) = x(r, (*index)[r]);
  OpAttrs attrs;
  attrs.index = std::move(index);
  return record1(OpKind::pick, a, std::move(out), std::move(attrs));
}

}  // namespace

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  return gather_rows_shared(a, std::make_shared<const std::vector<std::size_t>>(std::move(rows)));
}

Var scatter_rows(Var a, std::shared_ptr<const std::vector<std::size_t>> index, std::size_t rows) {
  const Tensor& x = a.value();
  if (index->size() != x.rows())
    throw ShapeError("scatter_rows: " + std::to_string(index->size()) + " indices for " + to_string(x.shape()));
  check_index("scatter_rows", *index, rows);
  Tensor out(rows, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out((*index)[r], c) += x(r, c);
  OpAttrs attrs;
  attrs.index = std::move(index);
  attrs.extent = rows;
  return record1(OpKind::scatter_rows, a, std::move(out), std::move(attrs));
}

Var concat_cols(Var a, Var b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.rows != sb.rows) shape_mismatch("concat", sa, sb);
  Tensor out(sa.rows, sa.cols + sb.cols);
  for (std::size_t r = 0; r < sa.rows; ++r) {
    for (std::size_t c = 0; c < sa.cols; ++c) out(r, c) = a.value()(r, c);
    for (std::size_t c = 0; c < sb.cols; ++c) out(r, sa.cols + c) = b.value()(r, c);
  }
  return record2(OpKind::concat_cols, a, b, std::move(out));
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Shape s = a.shape();
  if (count == 0 || start + count > s.cols)
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + to_string(s));
  Tensor out(s.rows, count);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = a.value()(r, start + c);
  OpAttrs attrs;
  attrs.offset = start;
  attrs.extent = count;
  return record1(OpKind::slice_cols, a, std::move(out), std::move(attrs));
}

Var embed_cols(Var a, std::size_t start, std::size_t total) {
  const Shape s = a.shape();
  if (start + s.cols > total)
    throw ShapeError("embed_cols: " + to_string(s) + " at column " + std::to_string(start) + " exceeds " +
                     std::to_string(total));
  Tensor out(s.rows, total);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) out(r, start + c) = a.value()(r, c);
  OpAttrs attrs;
  attrs.offset = start;
  attrs.extent = total;
  return record1(OpKind::embed_cols, a, std::move(out), std::move(attrs));
}

Var pick(Var a, std::vector<std::size_t> index) {
  return pick_shared(a, std::make_shared<const std::vector<std::size_t>>(std::move(index)));
}

Var scatter_pick(Var a, std::shared_ptr<const std::vector<std::size_t>> index, std::size_t cols) {
  const Tensor& x = a.value();
  if (x.cols() != 1 || index->size() != x.rows())
    throw ShapeError("scatter_pick: " + std::to_string(index->size()) + " indices for " + to_string(x.shape()));
  check_index("scatter_pick", *index, cols);
  Tensor out(x.rows(), cols);
  for (std::size_t r = 0; r < x.rows(); ++r) out(r, (*index)[r]) = x(r, 0);
  OpAttrs attrs;
  attrs.index = std::move(index);
  attrs.extent = cols;
  return record1(OpKind::scatter_pick, a, std::move(out), std::move(attrs));
}

Var sum_rows(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) out(r, 0) = kernels::sum(x.row_values(r));
  return record1(OpKind::sum_rows, a, std::move(out));
}

Var broadcast_cols(Var a, std::size_t cols) {
  const Tensor& x = a.value();
  if (x.cols() != 1) shape_mismatch("broadcast_cols", x.shape(), Shape{x.rows(), 1});
  Tensor out(x.rows(), cols);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = x(r, 0);
  OpAttrs attrs;
  attrs.extent = cols;
  return record1(OpKind::broadcast_cols, a, std::move(out), std::move(attrs));
}

Var reshape(Var a, Shape shape) {
  if (shape.size() != a.value().size()) shape_mismatch("reshape", a.shape(), shape);
  const auto v = a.value().values();
  OpAttrs attrs;
  attrs.target = shape;
  return record1(OpKind::reshape, a, Tensor(shape.rows, shape.cols, std::vector<double>(v.begin(), v.end())),
                 std::move(attrs));
}

namespace {

void check_geometry(std::string_view op, const ConvGeometry& g) {
  if (g.kernel == 0 || g.stride == 0 || g.height + 2 * g.pad < g.kernel || g.width + 2 * g.pad < g.kernel)
    throw ShapeError(std::string(op) + ": invalid convolution geometry");
}

// Calls f(out_row, out_col, in_index) for every in-bounds patch element.
template <class F>
void for_each_patch_element(const ConvGeometry& g, F f) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t image_size = g.height * g.width * g.channels;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t out_row = (n * oh + oy) * ow + ox;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            for (std::size_t ch = 0; ch < g.channels; ++ch) {
              const std::size_t out_col = (ky * g.kernel + kx) * g.channels + ch;
              const std::size_t in_index =
                  n * image_size + (static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)) * g.channels + ch;
              f(out_row, out_col, in_index);
            }
          }
        }
      }
}

}  // namespace

Var im2col(Var images, const ConvGeometry& g) {
  check_geometry("im2col", g);
  const Shape expect{g.batch, g.height * g.width * g.channels};
  if (images.shape() != expect) shape_mismatch("im2col", images.shape(), expect);
  Tensor out(g.batch * g.out_height() * g.out_width(), g.patch_size());
  const Tensor& x = images.value();
  for_each_patch_element(g, [&](std::size_t r, std::size_t c, std::size_t i) { out(r, c) = x[i]; });
  OpAttrs attrs;
  attrs.conv = g;
  return record1(OpKind::im2col, images, std::move(out), std::move(attrs));
}

Var col2im(Var columns, const ConvGeometry& g) {
  check_geometry("col2im", g);
  const Shape expect{g.batch * g.out_height() * g.out_width(), g.patch_size()};
  if (columns.shape() != expect) shape_mismatch("col2im", columns.shape(), expect);
  Tensor out(g.batch, g.height * g.width * g.channels);
  const Tensor& x = columns.value();
  for_each_patch_element(g, [&](std::size_t r, std::size_t c, std::size_t i) { out[i] += x(r, c); });
  OpAttrs attrs;
  attrs.conv = g;
  return record1(OpKind::col2im, columns, std::move(out), std::move(attrs));
}

Var apply(OpKind op, std::span<const Var> in) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n)
      throw ContractError(std::string(op_name(op)) + ": expected " + std::to_string(n) + " inputs, got " +
                          std::to_string(in.size()));
  };
  switch (op) {
    case OpKind::add: arity(2); return add(in[0], in[1]);
    case OpKind::sub: arity(2); return sub(in[0], in[1]);
    case OpKind::mul: arity(2); return mul(in[0], in[1]);
    case OpKind::matmul: arity(2); return matmul(in[0], in[1]);
    case OpKind::concat_cols: arity(2); return concat_cols(in[0], in[1]);
    case OpKind::transpose: arity(1); return transpose(in[0]);
    case OpKind::relu: arity(1); return relu(in[0]);
    case OpKind::sigmoid: arity(1); return sigmoid(in[0]);
    case OpKind::softmax: arity(1); return softmax(in[0]);
    case OpKind::log: arity(1); return log(in[0]);
    case OpKind::exp: arity(1); return exp(in[0]);
    case OpKind::sum: arity(1); return sum(in[0]);
    case OpKind::mean: arity(1); return mean(in[0]);
    case OpKind::square: arity(1); return square(in[0]);
    case OpKind::reciprocal: arity(1); return reciprocal(in[0]);
    default:
      throw ContractError(std::string(op_name(op)) + ": needs operands; call the named function");
  }
}

// ---------------------------------------------------------------------------
// Backward

namespace {

Var mask_where(Var ref, const Tensor& x, double threshold) {
  return constant_like(ref, map_values(x, [threshold](double v) { return v > threshold ? 1.0 : 0.0; }));
}

struct InputGrads {
  std::optional<Var> g[2];
};

// Gradients of one node w.r.t. its inputs, given the adjoint `g` of its output.
InputGrads backward_node(Tape& tape, OpKind op, const OpAttrs& attrs, Var out, Var in0, std::optional<Var> in1,
                         Var g) {
  (void)tape;
  InputGrads r;
  switch (op) {
    case OpKind::leaf:
      break;
    case OpKind::add:
      r.g[0] = g;
      r.g[1] = g;
      break;
    case OpKind::sub:
      r.g[0] = g;
      r.g[1] = scale(g, -1.0);
      break;
    case OpKind::mul:
      if (in0.requires_grad()) r.g[0] = mul(g, *in1);
      if (in1->requires_grad()) r.g[1] = mul(g, in0);
      break;
    case OpKind::matmul:
      if (in0.requires_grad()) r.g[0] = matmul(g, transpose(*in1));
      if (in1->requires_grad()) r.g[1] = matmul(transpose(in0), g);
      break;
    case OpKind::transpose:
      r.g[0] = transpose(g);
      break;
    case OpKind::relu:
      r.g[0] = mul(g, mask_where(g, in0.value(), 0.0));
      break;
    case OpKind::sigmoid:
      // y (1 - y)
      r.g[0] = mul(g, mul(out, add_scalar(scale(out, -1.0), 1.0)));
      break;
    case OpKind::softmax: {
      const std::size_t cols = out.shape().cols;
      r.g[0] = mul(out, sub(g, broadcast_cols(sum_rows(mul(g, out)), cols)));
      break;
    }
    case OpKind::log:
      r.g[0] = mul(g, reciprocal(in0));
      break;
    case OpKind::clamp_min:
      r.g[0] = mul(g, mask_where(g, in0.value(), attrs.scalar));
      break;
    case OpKind::reciprocal:
      r.g[0] = mul(g, scale(square(out), -1.0));
      break;
    case OpKind::exp:
      r.g[0] = mul(g, out);
      break;
    case OpKind::sum:
      r.g[0] = fill(g, in0.shape());
      break;
    case OpKind::mean:
      r.g[0] = scale(fill(g, in0.shape()), 1.0 / static_cast<double>(in0.value().size()));
      break;
    case OpKind::fill:
      r.g[0] = sum(g);
      break;
    case OpKind::square:
      r.g[0] = mul(g, scale(in0, 2.0));
      break;
    case OpKind::scale:
      r.g[0] = scale(g, attrs.scalar);
      break;
    case OpKind::add_scalar:
      r.g[0] = g;
      break;
    case OpKind::gather_rows:
      r.g[0] = scatter_rows(g, attrs.index, in0.shape().rows);
      break;
    case OpKind::scatter_rows:
      r.g[0] = gather_rows_shared(g, attrs.index);
      break;
    case OpKind::concat_cols: {
      const std::size_t ca = in0.shape().cols;
      if (in0.requires_grad()) r.g[0] = slice_cols(g, 0, ca);
      if (in1->requires_grad()) r.g[1] = slice_cols(g, ca, in1->shape().cols);
      break;
    }
    case OpKind::slice_cols:
      r.g[0] = embed_cols(g, attrs.offset, in0.shape().cols);
      break;
    case OpKind::embed_cols:
      r.g[0] = slice_cols(g, attrs.offset, in0.shape().cols);
      break;
    case OpKind::pick:
      r.g[0] = scatter_pick(g, attrs.index, in0.shape().cols);
      break;
    case OpKind::scatter_pick:
      r.g[0] = pick_shared(g, attrs.index);
      break;
    case OpKind::sum_rows:
      r.g[0] = broadcast_cols(g, in0.shape().cols);
      break;
    case OpKind::broadcast_cols:
      r.g[0] = sum_rows(g);
      break;
    case OpKind::reshape:
      r.g[0] = reshape(g, in0.shape());
      break;
    case OpKind::im2col:
      r.g[0] = col2im(g, attrs.conv);
      break;
    case OpKind::col2im:
      r.g[0] = im2col(g, attrs.conv);
      break;
  }
  return r;
}

}  // namespace

std::vector<Var> grad(Var output, std::span<const Var> wrt, bool create_graph) {
  Tape& tape = output.tape();
  if (output.shape() != Shape{1, 1})
    throw ContractError("grad: output must be a 1x1 scalar, got " + to_string(output.shape()));
  for (const Var& w : wrt) {
    if (!w.valid() || &w.tape() != &tape || w.id() > output.id())
      throw ContractError("grad: a wrt tensor is not on the output's tape");
  }

  std::optional<NoGradGuard> no_grad;
  if (!create_graph) no_grad.emplace(tape);

  const std::uint32_t top = output.id();
  std::vector<std::optional<Var>> adjoint(top + 1);
  adjoint[top] = tape.constant(Tensor::scalar(1.0));

  for (std::uint32_t id = top + 1; id-- > 0;) {
    if (!adjoint[id]) continue;
    // Copy what we need; recording new nodes may grow the deque.
    const Tape::Node& n = tape.node(id);
    if (n.op == OpKind::leaf || !n.requires_grad) continue;
    const OpKind op = n.op;
    const OpAttrs attrs = n.attrs;
    const std::uint8_t count = n.input_count;
    const std::uint32_t i0 = n.inputs[0], i1 = n.inputs[1];
    const Var in0 = tape.handle(i0);
    const std::optional<Var> in1 = count > 1 ? std::optional<Var>(tape.handle(i1)) : std::nullopt;

    InputGrads ig = backward_node(tape, op, attrs, tape.handle(id), in0, in1, *adjoint[id]);
    const std::uint32_t ids[2] = {i0, i1};
    for (std::uint8_t k = 0; k < count; ++k) {
      if (!ig.g[k] || !tape.node(ids[k]).requires_grad) continue;
      if (!ig.g[k]->value().all_finite())
        throw NumericalError(std::string(op_name(op)) + ": non-finite gradient");
      auto& slot = adjoint[ids[k]];
      slot = slot ? add(*slot, *ig.g[k]) : *ig.g[k];
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (adjoint[w.id()] && tape.node(w.id()).requires_grad)
      result.push_back(*adjoint[w.id()]);
    else
      result.push_back(tape.constant(Tensor(w.shape().rows, w.shape().cols)));
  }
  return result;
}

std::vector<Tensor> grad_values(Var output, std::span<const Var> wrt) {
  std::vector<Tensor> out;
  for (const Var& g : grad(output, wrt, false)) out.push_back(g.value());
  return out;
}

}  // namespace hkd::ad
