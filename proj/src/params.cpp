// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/params.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hkd/error.hpp"

namespace hkd {

void ModelParams::add(std::string name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ModelParams::contains(std::string_view name) const {
  for (const auto& [n, _] : entries_)
    if (n == name) return true;
  return false;
}

const Tensor& ModelParams::at(std::string_view name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

Tensor& ModelParams::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).at(name));
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

std::vector<ad::Var> ModelParams::bind(ad::Tape& tape, bool differentiable) const {
  std::vector<ad::Var> vars;
  vars.reserve(entries_.size());
  for (const auto& [_, t] : entries_) vars.push_back(differentiable ? tape.parameter(t) : tape.constant(t));
  return vars;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

void ModelParams::assign(std::span<const Tensor> values) {
  if (values.size() != entries_.size())
    throw ContractError("assign: " + std::to_string(values.size()) + " tensors for " +
                        std::to_string(entries_.size()) + " parameters");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != entries_[i].second.shape())
      throw ShapeError("assign: '" + entries_[i].first + "' is " + to_string(entries_[i].second.shape()) +
                       ", got " + to_string(values[i].shape()));
    entries_[i].second = values[i];
  }
}

bool ModelParams::same_layout(const ModelParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].first != other.entries_[i].first || entries_[i].second.shape() != other.entries_[i].second.shape())
      return false;
  return true;
}

ModelParams ModelParams::prefixed(std::string_view prefix) const {
  ModelParams out;
  for (const auto& [n, t] : entries_) out.add(std::string(prefix) + n, t);
  return out;
}

ModelParams ModelParams::extract(std::string_view prefix) const {
  ModelParams out;
  for (const auto& [n, t] : entries_)
    if (n.starts_with(prefix)) out.add(n.substr(prefix.size()), t);
  return out;
}

void ModelParams::append(const ModelParams& other) {
  for (const auto& [n, t] : other.entries_) add(n, t);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'H', 'K', 'D', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw ParseError(std::string("checkpoint truncated reading ") + what + " at offset " + std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ModelParams& params) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, params[i].rows());
    put<std::uint64_t>(out, params[i].cols());
    for (double v : params[i].values()) put<double>(out, v);
  }
  return out;
}

ModelParams decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic), "magic") != std::string_view(kMagic, sizeof(kMagic)))
    throw ParseError("checkpoint: bad magic at offset 0");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version) + " at offset 8");
  const auto count = r.get<std::uint32_t>("count");
  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name(r.take(len, "name"));
    const std::size_t shape_at = r.pos();
    const auto rows = r.get<std::uint64_t>("rows");
    const auto cols = r.get<std::uint64_t>("cols");
    if (rows == 0 || cols == 0 || rows > (1ull << 32) || cols > (1ull << 32))
      throw ParseError("checkpoint: bad shape for '" + name + "' at offset " + std::to_string(shape_at));
    std::vector<double> values(rows * cols);
    for (double& v : values) v = r.get<double>("values");
    params.add(std::move(name), Tensor(rows, cols, std::move(values)));
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes at offset " + std::to_string(r.pos()));
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  const std::string bytes = encode_checkpoint(params);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace hkd
