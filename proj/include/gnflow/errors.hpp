/// @file errors.hpp
/// @brief Error taxonomy shared across the library.
///
/// Every failure mode maps to one of five exception types so callers (CLI,
/// bindings, tests) can react uniformly:
///   - ArgumentError:   caller passed inconsistent dimensions/enums/values.
///   - NumericalError:  a non-finite value or a failed factorization surfaced
///                      during computation; message carries context (block,
///                      point index, condition diagnostics).
///   - CapacityError:   a dense operation exceeds the configured memory
///                      budget; message suggests the matrix-free path.
///   - ConfigError:     contradictory or malformed run configuration.
///   - IoError:         file system failures while reading/writing artifacts.

#pragma once

#include <stdexcept>
#include <string>

namespace gnflow {

struct ArgumentError : std::invalid_argument {
  explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gnflow
