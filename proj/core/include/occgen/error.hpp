// Copyright 2026 The OccGen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace occgen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or grid dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a forward op, a loss term or an optimizer step.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A value violates a documented precondition (bad config value, t out of range, ...).
class ValueError : public Error {
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

class FormatError : public Error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, Invalid };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace occgen
