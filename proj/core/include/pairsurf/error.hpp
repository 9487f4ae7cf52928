#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pairsurf {

// Every failure raised by the library carries one of these codes so callers
// (and the CLI) can branch on the kind of failure without parsing messages.
enum class ErrorCode {
  // ingestion
  MissingColumn,
  NonNumeric,
  DuplicateVisit,
  NonConstantGroup,
  EmptyGroup,
  InvalidData,
  // basis construction
  TooFewPoints,
  DegenerateGeometry,
  SingularPenalty,
  LengthMismatch,
  // design
  RankDeficientX,
  GroupMismatch,
  InvalidSpec,
  // engine
  NonPositiveDefinite,
  NoConvergence,
  UnknownGroup,
  UnknownOutcome,
  // inference
  TooManyFailures,
  InvalidSpecPair,
  NonNested,
  // io
  Io,
  Format,
};

std::string_view error_code_name(ErrorCode code);

// True for failures that stem from numerical trouble rather than bad input.
bool is_numerical(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string key = {})
      : std::runtime_error(message), code_(code), key_(std::move(key)) {}

  ErrorCode code() const noexcept { return code_; }
  // Offending configuration key or column, when there is one.
  const std::string& key() const noexcept { return key_; }

 private:
  ErrorCode code_;
  std::string key_;
};

}  // namespace pairsurf
