#pragma once

#include <stdexcept>
#include <string>

namespace tvr {

enum class ErrorCode {
  dimension,   // shapes do not agree
  format,      // malformed manifest / blob / checkpoint
  degenerate,  // zero-norm vector where a direction is required
  io,          // file could not be read or written
  usage,       // invalid argument combination
};

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

}  // namespace tvr
