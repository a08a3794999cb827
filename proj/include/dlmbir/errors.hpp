#pragma once

#include <stdexcept>
#include <string>

namespace dlmbir {

/// Thrown when tensor, volume, or network shapes disagree. Derives from
/// std::invalid_argument so generic argument handlers still catch it.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A persisted file (checkpoint or volume container) could not be read.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { io, not_found, corrupt_header, truncated, shape_mismatch };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class EmptyMaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  NonFiniteGradientError(std::string parameter)
      : std::runtime_error("non-finite gradient in " + parameter), parameter_(std::move(parameter)) {}
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

}  // namespace dlmbir
