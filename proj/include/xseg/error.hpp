#pragma once

#include <stdexcept>
#include <string>

namespace xseg {

enum class ErrorCode {
  invalid_argument,  // bad configuration or arguments supplied by the caller
  io,                // file missing, unreadable or unwritable
  data,              // input content violates a contract (shape, roles, classes)
  numeric,           // NaN / non-finite values during computation
  state,             // operation invoked in the wrong state
};

/// Exception type thrown by every module. The C API maps `code()` onto its
/// status enum; `what()` carries the human readable message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

/// Prefixes the message of an in-flight Error with a stage name.
[[noreturn]] void rethrow_with_stage(const std::string& stage, const Error& e);

const char* to_string(ErrorCode code);

}  // namespace xseg
