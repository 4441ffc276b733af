#pragma once

#include <stdexcept>
#include <string>

namespace winn {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed an argument outside an operation's contract.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent architecture, shapes or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or divergence during a numeric computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A primitive lacks a re-differentiable backward.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content; carries the byte offset of the failure.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Checkpoint container failures: bad magic/version, hash mismatch, truncation.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace winn
