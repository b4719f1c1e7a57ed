#pragma once

#include <stdexcept>
#include <string>

namespace qpat {

/// Violated precondition on an argument (bad size, non-unit direction, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Coefficients outside the admissible box 0 <= mu <= mu_max, 0 <= sigma <= sigma_max.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A linear solve or an iteration failed to converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or corrupted file contents (bad magic, hash mismatch, truncation).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration file: unknown key, missing key, unparsable value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qpat
