// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Dense double-precision inner loops. Every kernel has a scalar reference
// implementation; AVX2/FMA and NEON variants are selected once per process
// from what the CPU reports, or forced through HKD_SIMD=scalar|avx2|neon.

#include <cstddef>
#include <span>
#include <string_view>

namespace hkd::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  // c[m x n] = a[m x k] * b[k x n], all row-major, c overwritten.
  void (*gemm)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n);
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  void (*sub)(const double* x, const double* y, double* out, std::size_t n);
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  void (*scale)(double alpha, const double* x, double* out, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
};

namespace scalar {
const KernelTable& table();
}
#if defined(HKD_HAVE_AVX2_KERNELS)
namespace avx2 {
const KernelTable& table();
}
#endif
#if defined(HKD_HAVE_NEON_KERNELS)
namespace neon {
const KernelTable& table();
}
#endif

bool isa_available(Isa isa);

// Throws ContractError if the ISA was not compiled in or the CPU lacks it.
const KernelTable& table(Isa isa);

// The table chosen at first use; stable for the lifetime of the process.
const KernelTable& active();
Isa active_isa();

// Span wrappers over the active table.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n);
void add(std::span<const double> x, std::span<const double> y, std::span<double> out);
void sub(std::span<const double> x, std::span<const double> y, std::span<double> out);
void mul(std::span<const double> x, std::span<const double> y, std::span<double> out);
void scale(double alpha, std::span<const double> x, std::span<double> out);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
double sum(std::span<const double> x);

}  // namespace hkd::kernels
