// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace hkd {

/// Base of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation produced NaN or Inf, or a gradient became non-finite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an API was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents; the message carries the byte offset.
class ParseError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace hkd
