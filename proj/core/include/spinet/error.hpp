#pragma once

#include <stdexcept>
#include <string>

namespace spinet {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extents or ranks that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or option values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An object was used in a state that does not allow the call.
class StateError : public Error {
 public:
  using Error::Error;
};

// Input values outside their domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Empty temporal axis or empty collections where at least one item is needed.
class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// A forward computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// No frame survived the cloud filter.
class SelectionError : public Error {
 public:
  using Error::Error;
};

// Binary container problems (checkpoints and sample files).
class FormatError : public Error {
 public:
  enum class Kind {
    bad_magic,
    truncated,
    unsupported_version,
    corrupt_manifest,
    payload_length,
    shape_mismatch,
    config_mismatch,
    io,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Training hit a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace spinet
