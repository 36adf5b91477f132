#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cvr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset record failed to parse or violated its kind's schema.
class DatasetError : public Error {
 public:
  DatasetError(std::size_t line, std::string field, const std::string& what)
      : Error("line " + std::to_string(line) + ", field '" + field + "': " + what),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

// A prediction or score does not have the shape its task kind requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Retryable transport failure (connection reset, 429, 5xx).
class TransientError : public Error {
 public:
  using Error::Error;
};

// Retries exhausted.
class BackendUnavailable : public Error {
 public:
  using Error::Error;
};

// Non-retryable protocol failure; carries an excerpt of the response body.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ImageFetchError : public Error {
 public:
  using Error::Error;
};

// A scripted mock ran out of responses for a role.
class ScriptExhausted : public Error {
 public:
  using Error::Error;
};

}  // namespace cvr
