#pragma once

#include <stdexcept>
#include <string>

namespace sparsetrain {

// Caller broke a documented precondition (shape mismatch, bad chain).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid experiment / schedule / training configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed serialized data (checkpoint container, compressed layers).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss or weights).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sparsetrain
