#pragma once

#include <stdexcept>
#include <string>

namespace harmony {

/// Shape or axis mismatch between operands. `axis()` names the offending axis.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(std::string axis, const std::string& what)
      : std::invalid_argument(what), axis_(std::move(axis)) {}
  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

/// A value violates a documented precondition (range, config constraint).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Misuse of an API contract, e.g. backward() on a non-scalar.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

class VersionError : public IoError {
 public:
  using IoError::IoError;
};

/// Non-finite loss or gradient during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace harmony
