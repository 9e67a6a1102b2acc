#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace hbscreen {

// Root of every error the library throws. `stage()` names the pipeline stage
// that failed when one applies; it is empty for plain argument errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message, std::string stage = {})
      : std::runtime_error(message), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

// Input data that cannot be decoded or is missing (files, images, CSV rows).
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid or unreadable configuration (unknown keys, out-of-range values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised when sclera-referenced illumination correction has no reference pixels.
class NoReferenceError : public Error {
 public:
  using Error::Error;
};

// A blood report with no recognizable haemoglobin value.
class ParseError : public Error {
 public:
  using Error::Error;
};

// A parsed value outside its physiological range; `field()` names it.
class RangeError : public ParseError {
 public:
  RangeError(const std::string& field, const std::string& message)
      : ParseError(message), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// OCR transport failures (timeouts, connection errors), distinct from ParseError.
class TransportError : public Error {
 public:
  using Error::Error;
};

class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& message) : Error(message, std::move(stage)) {}
};

}  // namespace hbscreen
