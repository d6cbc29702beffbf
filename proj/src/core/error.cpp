#include "xseg/error.hpp"

namespace xseg {

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

void rethrow_with_stage(const std::string& stage, const Error& e) {
  throw Error(e.code(), stage + ": " + e.what());
}

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::io: return "io";
    case ErrorCode::data: return "data";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::state: return "state";
  }
  return "unknown";
}

}  // namespace xseg
