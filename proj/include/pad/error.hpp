#pragma once

#include <stdexcept>
#include <string>

namespace pad {

enum class ErrorCode {
  InvalidArgument,
  NotEnoughFiducials,
  DegenerateFiducials,
  WaxMarkNotFound,
  DecodeError,
  Io,
  Config,
};

/// Library-wide exception. The code is what the CLI maps to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NotEnoughFiducials: return "NotEnoughFiducials";
    case ErrorCode::DegenerateFiducials: return "DegenerateFiducials";
    case ErrorCode::WaxMarkNotFound: return "WaxMarkNotFound";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::InvalidArgument, what);
}

}  // namespace pad
