#pragma once

#include <stdexcept>
#include <string>

namespace kwsf {

enum class ErrorCode {
  kInvalidArgument,
  kFormat,            // malformed file contents
  kUnsupported,       // well-formed but unsupported encoding
  kIo,
  kEmptyDataset,
  kInsufficientNoise,
  kTooShort,
  kResolution,        // mel filter spans no FFT bin
  kShape,
  kDegenerateBatch,
  kConfig,
  kDiverged,          // non-finite loss, gradient or activation
  kCorruptCheckpoint,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace kwsf
