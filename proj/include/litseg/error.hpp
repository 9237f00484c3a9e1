#pragma once

#include <stdexcept>
#include <string>

namespace litseg {

enum class ErrorCode {
  FileNotFound,
  MalformedHeader,
  NonScalarImage,
  NonFiniteData,
  InvalidLabel,
  IoError,
  InvalidShape,
  OddDimension,
  IndexOutOfRange,
  EmptyTarget,
  InvalidSpec,
  ShapeMismatch,
  NonfiniteInput,
  NoEligibleSlices,
  NonfiniteLoss,
  ModelInputMismatch,
  EmptyMask,
  EmptyLiver,
  InvalidCount,
  InvalidConfig,
  UnmatchedCases,
  CheckpointMismatch,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace litseg
