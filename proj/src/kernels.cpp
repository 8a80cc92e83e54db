// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/kernels.hpp"

#include <cstdlib>
#include <string>

#include "hkd/error.hpp"

namespace hkd::kernels {
namespace {

bool cpu_has(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(HKD_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(HKD_HAVE_NEON_KERNELS)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa choose() {
  if (const char* env = std::getenv("HKD_SIMD")) {
    const std::string want = env;
    if (want == "scalar") return Isa::scalar;
    if (want == "avx2" && cpu_has(Isa::avx2)) return Isa::avx2;
    if (want == "neon" && cpu_has(Isa::neon)) return Isa::neon;
  }
  if (cpu_has(Isa::avx2)) return Isa::avx2;
  if (cpu_has(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

struct Active {
  Isa isa;
  const KernelTable* table;
};

const Active& active_state() {
  static const Active state = [] {
    const Isa isa = choose();
    return Active{isa, &kernels::table(isa)};
  }();
  return state;
}

void require_size(std::size_t got, std::size_t want, const char* what) {
  if (got < want)
    throw ContractError(std::string("kernels::") + what + ": buffer too small (" +
                        std::to_string(got) + " < " + std::to_string(want) + ")");
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

bool isa_available(Isa isa) { return cpu_has(isa); }

const KernelTable& table(Isa isa) {
  if (!cpu_has(isa))
    throw ContractError("kernel ISA '" + std::string(isa_name(isa)) + "' is not available");
  switch (isa) {
    case Isa::scalar:
      return scalar::table();
#if defined(HKD_HAVE_AVX2_KERNELS)
    case Isa::avx2:
      return avx2::table();
#endif
#if defined(HKD_HAVE_NEON_KERNELS)
    case Isa::neon:
      return neon::table();
#endif
    default:
      break;
  }
  throw ContractError("kernel ISA '" + std::string(isa_name(isa)) + "' is not compiled in");
}

const KernelTable& active() { return *active_state().table; }

Isa active_isa() { return active_state().isa; }

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n) {
  require_size(a.size(), m * k, "gemm(a)");
  require_size(b.size(), k * n, "gemm(b)");
  require_size(c.size(), m * n, "gemm(c)");
  active().gemm(a.data(), b.data(), c.data(), m, k, n);
}

void add(std::span<const double> x, std::span<const double> y, std::span<double> out) {
  require_size(y.size(), x.size(), "add");
  require_size(out.size(), x.size(), "add");
  active().add(x.data(), y.data(), out.data(), x.size());
}

void sub(std::span<const double> x, std::span<const double> y, std::span<double> out) {
  require_size(y.size(), x.size(), "sub");
  require_size(out.size(), x.size(), "sub");
  active().sub(x.data(), y.data(), out.data(), x.size());
}

void mul(std::span<const double> x, std::span<const double> y, std::span<double> out) {
  require_size(y.size(), x.size(), "mul");
  require_size(out.size(), x.size(), "mul");
  active().mul(x.data(), y.data(), out.data(), x.size());
}

void scale(double alpha, std::span<const double> x, std::span<double> out) {
  require_size(out.size(), x.size(), "scale");
  active().scale(alpha, x.data(), out.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_size(y.size(), x.size(), "axpy");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

}  // namespace hkd::kernels
