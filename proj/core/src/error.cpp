#include "pairsurf/error.hpp"

namespace pairsurf {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonNumeric: return "NonNumeric";
    case ErrorCode::DuplicateVisit: return "DuplicateVisit";
    case ErrorCode::NonConstantGroup: return "NonConstantGroup";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::InvalidData: return "InvalidData";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::SingularPenalty: return "SingularPenalty";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::RankDeficientX: return "RankDeficientX";
    case ErrorCode::GroupMismatch: return "GroupMismatch";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::NonPositiveDefinite: return "NonPositiveDefinite";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::UnknownGroup: return "UnknownGroup";
    case ErrorCode::UnknownOutcome: return "UnknownOutcome";
    case ErrorCode::TooManyFailures: return "TooManyFailures";
    case ErrorCode::InvalidSpecPair: return "InvalidSpecPair";
    case ErrorCode::NonNested: return "NonNested";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
  }
  return "Unknown";
}

bool is_numerical(ErrorCode code) {
  switch (code) {
    case ErrorCode::SingularPenalty:
    case ErrorCode::NonPositiveDefinite:
    case ErrorCode::NoConvergence:
    case ErrorCode::TooManyFailures:
      return true;
    default:
      return false;
  }
}

}  // namespace pairsurf
