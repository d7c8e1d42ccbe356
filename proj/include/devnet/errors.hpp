#pragma once

#include <stdexcept>
#include <string>

namespace devnet {

// Every error the library throws derives from Error so callers can catch
// the whole family at once. The CLI maps the subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or dimensionalities that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or generator settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf showed up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated input file. `offset` is the byte position where
// parsing gave up.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace devnet
