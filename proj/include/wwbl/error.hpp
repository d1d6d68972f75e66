// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace wwbl {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  BackendUnavailable,
  UninitializedWeights,
  NonFiniteLoss,
  InvalidPhrase,
  ConfigError,
  DataError,
  CheckpointError,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace wwbl
