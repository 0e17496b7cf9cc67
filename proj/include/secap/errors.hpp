#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace secap {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Model or pipeline configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Query/gallery construction or scoring cannot proceed.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced by a forward pass or loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace secap
