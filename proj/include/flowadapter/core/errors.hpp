#pragma once

#include <stdexcept>
#include <string>

namespace fa {

// Failure categories. Each maps onto one CLI exit code.
enum class ErrorKind { Config, Usage, Input, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::Input, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

// 0 success, 1 usage/config, 2 data, 3 numeric failure.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Usage:
      return 1;
    case ErrorKind::Input:
      return 2;
    case ErrorKind::Numeric:
      return 3;
  }
  return 1;
}

}  // namespace fa
