#pragma once

#include <stdexcept>
#include <string>

namespace otopipe {

// Malformed or inconsistent input data. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated an operation's precondition (bad argument, impossible
// configuration). Maps to CLI exit code 1 when raised from flag handling.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace otopipe
