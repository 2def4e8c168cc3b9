#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace riskbench {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or inconsistent columns, bad task/config documents.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A data cell could not be parsed. Carries the zero-based data row index.
class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class TypeError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A value has no text mapping in the codebook.
class CodebookError : public Error {
 public:
  using Error::Error;
};

/// Transport failed after exhausting retries.
class EndpointError : public Error {
 public:
  using Error::Error;
};

class RateLimitError : public EndpointError {
 public:
  using EndpointError::EndpointError;
};

/// The endpoint answered but does not expose token probabilities.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class ScriptedMissError : public Error {
 public:
  using Error::Error;
};

class OracleError : public Error {
 public:
  using Error::Error;
};

/// No usable answer token in a returned distribution.
class ExtractionError : public Error {
 public:
  using Error::Error;
};

class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace riskbench
