#pragma once

#include <stdexcept>
#include <string>

namespace alqa {

// Base of all framework errors. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or schema violation (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable, malformed or inconsistent input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

// Violated operation precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Field-level validation failure; `field` names the offending input field.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

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

}  // namespace alqa
