#include "persona/error.hpp"

namespace persona {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kDuplicateName: return "DuplicateName";
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kCorruptManifest: return "CorruptManifest";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kDecodeError: return "DecodeError";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kPolarityContradiction: return "PolarityContradiction";
    case ErrorCode::kAnnotatorUnavailable: return "AnnotatorUnavailable";
    case ErrorCode::kNoiseOverlapsTarget: return "NoiseOverlapsTarget";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kUnknownTruth: return "UnknownTruth";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

std::string_view api_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDuplicateName: return "duplicate_name";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kBackendUnavailable:
    case ErrorCode::kMalformedResponse:
    case ErrorCode::kAnnotatorUnavailable: return "backend_unavailable";
    case ErrorCode::kCorruptManifest: return "corrupt_manifest";
    default: return "validation_failed";
  }
}

}  // namespace persona
