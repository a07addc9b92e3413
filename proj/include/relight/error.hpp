#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace relight {

enum class ErrorCode {
  MalformedHeader,
  AspectViolation,
  NonNegativeViolation,
  TruncatedPayload,
  NonUnitDirection,
  NonPositiveClip,
  InvalidSpec,
  DegenerateScene,
  IoFailure,
  EmptySplit,
  EmptyRealSet,
  InvalidScheduleParams,
  StepOutOfRange,
  ShapeMismatch,
  InvalidConfig,
  LabelOutOfRange,
  NonFiniteLoss,
  CorruptCheckpoint,
  VersionMismatch,
  StepOrderViolation,
  EmptyList,
  TooSmall,
  EmptyMask,
  UnknownConfigKey,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code. The CLI prints it as
/// `ERROR:<code>:<message>`.
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

}  // namespace relight
