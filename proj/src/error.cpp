#include "momentguard/error.hpp"

namespace momentguard {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::SingularSigma: return "SingularSigma";
    case ErrorCode::RankDeficientGamma: return "RankDeficientGamma";
    case ErrorCode::ZeroH: return "ZeroH";
    case ErrorCode::InvalidBias: return "InvalidBias";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::EmptySuspectSet: return "EmptySuspectSet";
    case ErrorCode::CNotInSet: return "CNotInSet";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::DegeneratePath: return "DegeneratePath";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::NoFeasibleKKTPoint: return "NoFeasibleKKTPoint";
    case ErrorCode::NoValidS: return "NoValidS";
    case ErrorCode::SingularW1: return "SingularW1";
    case ErrorCode::ConstraintViolated: return "ConstraintViolated";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::RankDeficiency: return "RankDeficiency";
    case ErrorCode::TooManyInvalidMoments: return "TooManyInvalidMoments";
    case ErrorCode::JustIdentified: return "JustIdentified";
    case ErrorCode::VertexEnumerationTooLarge: return "VertexEnumerationTooLarge";
    case ErrorCode::DimensionTooLarge: return "DimensionTooLarge";
    case ErrorCode::InfeasibleDelta: return "InfeasibleDelta";
    case ErrorCode::EmptyFrontier: return "EmptyFrontier";
  }
  return "Unknown";
}

ErrorCategory category(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput:
    case ErrorCode::SingularSigma:
    case ErrorCode::RankDeficientGamma:
    case ErrorCode::ZeroH:
    case ErrorCode::InvalidBias:
    case ErrorCode::OutOfRange:
    case ErrorCode::EmptySuspectSet:
    case ErrorCode::CNotInSet:
      return ErrorCategory::Validation;
    case ErrorCode::SingularSystem:
    case ErrorCode::DegeneratePath:
    case ErrorCode::SolverFailure:
    case ErrorCode::NoFeasibleKKTPoint:
    case ErrorCode::NoValidS:
    case ErrorCode::SingularW1:
    case ErrorCode::ConstraintViolated:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Dimension;
  }
}

namespace {

std::string compose(ErrorCode code, const std::string& field, const std::string& message) {
  std::string out(to_string(code));
  if (!field.empty()) out += " [" + field + "]";
  if (!message.empty()) out += ": " + message;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, std::string field, const std::string& message)
    : std::runtime_error(compose(code, field, message)), code_(code), field_(std::move(field)) {}

}  // namespace momentguard
