#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace momentguard {

enum class ErrorCode {
  // input validation
  InvalidInput,
  SingularSigma,
  RankDeficientGamma,
  ZeroH,
  InvalidBias,
  OutOfRange,
  EmptySuspectSet,
  CNotInSet,
  // numerical failure
  SingularSystem,
  DegeneratePath,
  SolverFailure,
  NoFeasibleKKTPoint,
  NoValidS,
  SingularW1,
  ConstraintViolated,
  // dimension / feasibility
  DimensionMismatch,
  RankDeficiency,
  TooManyInvalidMoments,
  JustIdentified,
  VertexEnumerationTooLarge,
  DimensionTooLarge,
  InfeasibleDelta,
  EmptyFrontier,
};

enum class ErrorCategory { Validation, Numerical, Dimension };

std::string_view to_string(ErrorCode code);
ErrorCategory category(ErrorCode code);

/// Exception carrying a machine-readable code and the name of the offending
/// input field (empty when no single field is to blame).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string field, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::string field_;
};

}  // namespace momentguard
