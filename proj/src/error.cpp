#include "relight/error.hpp"

namespace relight {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::AspectViolation: return "AspectViolation";
    case ErrorCode::NonNegativeViolation: return "NonNegativeViolation";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonUnitDirection: return "NonUnitDirection";
    case ErrorCode::NonPositiveClip: return "NonPositiveClip";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::DegenerateScene: return "DegenerateScene";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::EmptyRealSet: return "EmptyRealSet";
    case ErrorCode::InvalidScheduleParams: return "InvalidScheduleParams";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::StepOrderViolation: return "StepOrderViolation";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::UnknownConfigKey: return "UnknownConfigKey";
  }
  return "Unknown";
}

}  // namespace relight
