#pragma once

#include <stdexcept>
#include <string>

namespace rfuse {

/// Bad user input: malformed files, inconsistent dimensions, invalid config.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// On-disk payload does not follow the expected layout.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Numerical breakdown during estimation (non-PD matrices, NaN losses).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rfuse
