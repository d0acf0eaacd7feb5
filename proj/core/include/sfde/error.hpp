#pragma once

#include <stdexcept>
#include <string>

namespace sfde {

enum class ErrorKind {
  Shape,
  Config,
  Validation,
  Numeric,
  Io,
  Format,
};

/// Base of every exception thrown by the library. The kind maps onto the
/// command-line exit codes (see exit_code_for).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Shape, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

enum class FormatErrorCode {
  MagicMismatch,
  VersionMismatch,
  Truncated,
  NonUnitVector,
  InvalidField,
};

const char* to_string(FormatErrorCode code) noexcept;

/// Malformed persistent file (embedding store, checkpoint, image).
class FormatError : public Error {
 public:
  FormatError(FormatErrorCode code, const std::string& what)
      : Error(ErrorKind::Format, std::string(to_string(code)) + ": " + what), code_(code) {}
  FormatErrorCode code() const noexcept { return code_; }

 private:
  FormatErrorCode code_;
};

/// 0 success, 1 validation failure, 2 numeric failure, 3 I/O failure.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace sfde
