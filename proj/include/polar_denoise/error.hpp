#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace polar_denoise {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain (z <= 0, negative order, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Argument inside the domain but outside the range with an accuracy guarantee.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Two points closer than the kernel's distance floor.
class SingularityError : public Error {
 public:
  using Error::Error;
};

class InvalidParameter : public Error {
 public:
  InvalidParameter(std::string key, const std::string& what)
      : Error("invalid parameter '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// An empty selection where at least one element is required
/// (no atom inside a ball, no training pair kept).
class EmptySelection : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in a simulated state.
class NonFiniteState : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  malformed_magic,
  unsupported_type,
  truncated_file,
  version_mismatch,
  corrupt_header,
  io_failure,
};

/// Binary or text file that does not follow its declared format.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, std::size_t offset, const std::string& what)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), kind_(kind), offset_(offset) {}
  FormatErrorKind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  FormatErrorKind kind_;
  std::size_t offset_;
};

}  // namespace polar_denoise
