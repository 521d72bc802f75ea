#pragma once

#include <stdexcept>
#include <string>

namespace roomseq {

enum class ErrorCode {
  InvalidArgument,
  CoordinateOutOfRange,
  MalformedSequence,
  SequenceTooLong,
  TokenOutOfRange,
  ShapeMismatch,
  AllMasked,
  InfeasibleStep,
  InfeasiblePartition,
  NonFiniteLoss,
  VocabularyMismatch,
  DimensionMismatch,
  TooSmall,
  TooFewSamples,
  Io,
  Parse,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace roomseq
