#pragma once

#include <stdexcept>
#include <string>

namespace veritrace {

/// Invalid argument or violated precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable or unwritable file, or a file that is not what it claims to be.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration: unknown keys, missing roles, missing credentials.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values in numerical code.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace veritrace
