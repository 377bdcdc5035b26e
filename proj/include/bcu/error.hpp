// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bcu {

/// Base of every failure raised by the library. `exit_code()` is the CLI status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Invalid configuration, shape mismatch between declared pieces, bad flags.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Caller-supplied values out of their domain (labels out of range, ...).
class InputError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Malformed or truncated file contents.
class FormatError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// NaN/Inf produced by a numeric kernel.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// Divergence during an optimization loop.
class TrainingError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// API called in the wrong order (backward without forward, ...).
class StateError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

/// Inconsistent inputs to a comparison report.
class ReportError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace bcu
