#pragma once

#include <stdexcept>
#include <string>

namespace stbs {

enum class ErrorCode {
  invalid_argument = 1,
  io = 2,
  parse = 3,
  domain = 4,
  numeric = 5,
  schema = 6,
  config = 7,
  internal = 99,
};

/// Exception type used throughout the library. The C API maps the code onto
/// its status enum and exposes the message through stbs_last_error().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace stbs
