#include "litseg/error.hpp"

namespace litseg {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::NonScalarImage: return "NonScalarImage";
    case ErrorCode::NonFiniteData: return "NonFiniteData";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::OddDimension: return "OddDimension";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::EmptyTarget: return "EmptyTarget";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonfiniteInput: return "NonfiniteInput";
    case ErrorCode::NoEligibleSlices: return "NoEligibleSlices";
    case ErrorCode::NonfiniteLoss: return "NonfiniteLoss";
    case ErrorCode::ModelInputMismatch: return "ModelInputMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyLiver: return "EmptyLiver";
    case ErrorCode::InvalidCount: return "InvalidCount";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnmatchedCases: return "UnmatchedCases";
    case ErrorCode::CheckpointMismatch: return "CheckpointMismatch";
  }
  return "Unknown";
}

}  // namespace litseg
