// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "hkd/error.hpp"
#include "hkd/kernels.hpp"

using hkd::kernels::Isa;
using hkd::kernels::KernelTable;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

std::vector<Isa> simd_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::avx2, Isa::neon})
    if (hkd::kernels::isa_available(isa)) out.push_back(isa);
  return out;
}

}  // namespace

TEST_CASE("scalar table is always available") {
  CHECK(hkd::kernels::isa_available(Isa::scalar));
  CHECK_NOTHROW(hkd::kernels::table(Isa::scalar));
  MESSAGE("active kernels: " << hkd::kernels::isa_name(hkd::kernels::active_isa()));
}

TEST_CASE("scalar gemm matches the textbook triple loop exactly") {
  std::mt19937_64 rng(7);
  const std::size_t m = 5, k = 7, n = 3;
  const auto a = random_vector(rng, m * k), b = random_vector(rng, k * n);
  std::vector<double> c(m * n);
  hkd::kernels::table(Isa::scalar).gemm(a.data(), b.data(), c.data(), m, k, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == s);
    }
}

TEST_CASE("SIMD gemm is equivalent to scalar across tail shapes") {
  const KernelTable& ref = hkd::kernels::table(Isa::scalar);
  std::mt19937_64 rng(11);
  for (Isa isa : simd_isas()) {
    const KernelTable& simd = hkd::kernels::table(isa);
    for (std::size_t m : {1u, 3u, 4u, 5u, 9u, 64u})
      for (std::size_t k : {1u, 2u, 7u, 32u})
        for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 13u, 17u, 256u}) {
          const auto a = random_vector(rng, m * k), b = random_vector(rng, k * n);
          std::vector<double> c0(m * n, 99.0), c1(m * n, -99.0);
          ref.gemm(a.data(), b.data(), c0.data(), m, k, n);
          simd.gemm(a.data(), b.data(), c1.data(), m, k, n);
          double worst = 0.0;
          for (std::size_t i = 0; i < m * n; ++i) {
            // Same summation order; only FMA rounding differs, so error is
            // bounded by k ulps of the running magnitude.
            double bound = 0.0;
            for (std::size_t p = 0; p < k; ++p) bound += std::abs(a[(i / n) * k + p] * b[p * n + i % n]);
            worst = std::max(worst, std::abs(c0[i] - c1[i]) / (bound + 1e-300));
          }
          INFO(hkd::kernels::isa_name(isa) << " m=" << m << " k=" << k << " n=" << n);
          CHECK(worst < 1e-14);
        }
  }
}

TEST_CASE("SIMD elementwise kernels are bitwise equal to scalar") {
  const KernelTable& ref = hkd::kernels::table(Isa::scalar);
  std::mt19937_64 rng(3);
  for (Isa isa : simd_isas()) {
    const KernelTable& simd = hkd::kernels::table(isa);
    for (std::size_t n = 0; n < 40; ++n) {
      const auto x = random_vector(rng, n), y = random_vector(rng, n);
      std::vector<double> o0(n), o1(n);
      ref.add(x.data(), y.data(), o0.data(), n);
      simd.add(x.data(), y.data(), o1.data(), n);
      CHECK(o0 == o1);
      ref.sub(x.data(), y.data(), o0.data(), n);
      simd.sub(x.data(), y.data(), o1.data(), n);
      CHECK(o0 == o1);
      ref.mul(x.data(), y.data(), o0.data(), n);
      simd.mul(x.data(), y.data(), o1.data(), n);
      CHECK(o0 == o1);
      ref.scale(-0.37, x.data(), o0.data(), n);
      simd.scale(-0.37, x.data(), o1.data(), n);
      CHECK(o0 == o1);
    }
  }
}

TEST_CASE("SIMD axpy and sum agree with scalar to rounding") {
  const KernelTable& ref = hkd::kernels::table(Isa::scalar);
  std::mt19937_64 rng(5);
  for (Isa isa : simd_isas()) {
    const KernelTable& simd = hkd::kernels::table(isa);
    for (std::size_t n = 0; n < 70; n += 3) {
      const auto x = random_vector(rng, n);
      auto y0 = random_vector(rng, n);
      const auto y = y0;
      auto y1 = y0;
      ref.axpy(0.61, x.data(), y0.data(), n);
      simd.axpy(0.61, x.data(), y1.data(), n);
      // FMA skips one rounding of the product.
      for (std::size_t i = 0; i < n; ++i)
        CHECK(std::abs(y0[i] - y1[i]) <= 2.3e-16 * (std::abs(y[i]) + std::abs(0.61 * x[i])));

      double abs_sum = 0.0;
      for (double v : x) abs_sum += std::abs(v);
      CHECK(std::abs(ref.sum(x.data(), n) - simd.sum(x.data(), n)) <= 1e-15 * (abs_sum + 1.0) * (n + 1));
    }
  }
}

TEST_CASE("span wrappers validate buffer sizes") {
  std::vector<double> a(6), b(6), c(3);
  CHECK_THROWS_AS(hkd::kernels::gemm(a, b, c, 2, 3, 2), hkd::ContractError);
  CHECK_THROWS_AS(hkd::kernels::add(a, c, a), hkd::ContractError);
}

TEST_CASE("active dispatch is stable") {
  CHECK(&hkd::kernels::active() == &hkd::kernels::active());
  CHECK(&hkd::kernels::active() == &hkd::kernels::table(hkd::kernels::active_isa()));
}
