#pragma once

#include <stdexcept>
#include <string>

namespace dynfed {

/// Base class for every error raised by the core library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on shapes, lengths or parameter ranges was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid scenario configuration; `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// File-system failure; the message always carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dynfed
