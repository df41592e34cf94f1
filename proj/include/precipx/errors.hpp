// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace precipx {

/// Base class for every error raised by the library. The CLI maps these to
/// exit code 1 and prints what().
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SizingError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class ConstructionError : public Error { using Error::Error; };
class GenerationError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class IntegrityError : public Error { using Error::Error; };
class VersionError : public Error { using Error::Error; };
class IncompatibleError : public Error { using Error::Error; };

/// Raised when a harness step needs an artifact that an earlier subcommand
/// produces. The message names that subcommand.
class MissingPrerequisite : public Error { using Error::Error; };
/// Unknown or ill-typed configuration key; the CLI treats it as a usage error.
class ConfigError : public Error { using Error::Error; };

}  // namespace precipx
