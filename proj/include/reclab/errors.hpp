#pragma once

#include <stdexcept>
#include <string>

namespace reclab {

// Base for every failure the library reports. `code()` is a stable,
// machine-readable name (e.g. "EmptyTitle", "DeadlineExceeded") that the
// HTTP layer and the CLI surface verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Input that violates a domain invariant. `field()` names the offending
// field where one exists.
class ValidationError : public Error {
 public:
  ValidationError(std::string code, std::string field, const std::string& message)
      : Error(std::move(code), message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class StorageError : public Error {
 public:
  using Error::Error;
};

// Parse failure in a line-oriented input. Line numbers are 1-based.
class LineError : public Error {
 public:
  LineError(std::string code, std::size_t line, const std::string& message)
      : Error(std::move(code), "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace reclab
