#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lopr {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

// Caller violated an operation's precondition.
struct ContractError : Error {
  using Error::Error;
};

// Malformed or truncated file payload.
struct FormatError : Error {
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::uint64_t byte_offset;
};

// Training aborted: non-finite loss or gradient.
struct TrainingError : Error {
  TrainingError(const std::string& what, std::string param, long at_step)
      : Error(what), parameter(std::move(param)), step(at_step) {}
  std::string parameter;
  long step;
};

}  // namespace lopr
