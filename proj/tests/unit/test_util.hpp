// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "hkd/tensor.hpp"

namespace hkd::testing {

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// Random distribution rows, bounded away from zero.
inline Tensor random_distribution(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Tensor t = random_tensor(rng, rows, cols, 0.05, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += t(r, c);
    for (std::size_t c = 0; c < cols; ++c) t(r, c) /= z;
  }
  return t;
}

}  // namespace hkd::testing
