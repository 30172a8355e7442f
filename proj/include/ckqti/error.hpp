// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ckqti {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// A configuration value violates its invariants.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// A call was made outside the operation's preconditions.
class ContractError : public Error {
  public:
    using Error::Error;
};

/// An operation produced NaN or Inf.
class NumericError : public Error {
  public:
    using Error::Error;
};

/// Malformed or incompatible file.
class FormatError : public Error {
  public:
    using Error::Error;
};

}  // namespace ckqti
