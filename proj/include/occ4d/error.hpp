#pragma once

#include <stdexcept>
#include <string>

namespace occ4d {

enum class ErrorKind {
  invalid_parameter,
  degenerate_covariance,
  shape,
  validation,
  range,
  io,
  numeric,
};

/// Single exception type for the library; the kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// 2 = validation, 3 = numeric failure, 4 = IO.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io:
      return 4;
    case ErrorKind::numeric:
    case ErrorKind::degenerate_covariance:
      return 3;
    default:
      return 2;
  }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace occ4d
