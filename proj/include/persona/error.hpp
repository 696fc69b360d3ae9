#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace persona {

enum class ErrorCode {
  kDimensionMismatch,
  kZeroVector,
  kNonFinite,
  kDuplicateName,
  kNotFound,
  kIoError,
  kCorruptManifest,
  kBackendUnavailable,
  kMalformedResponse,
  kDecodeError,
  kIndexOutOfRange,
  kPolarityContradiction,
  kAnnotatorUnavailable,
  kNoiseOverlapsTarget,
  kEmptyInput,
  kUnknownTruth,
  kInvalidArgument,
};

std::string_view to_string(ErrorCode code);

// Maps an internal error onto the closed set of API error codes:
// duplicate_name, not_found, dimension_mismatch, backend_unavailable,
// corrupt_manifest, validation_failed.
std::string_view api_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::string> stage = std::nullopt)
      : std::runtime_error(message), code_(code), stage_(std::move(stage)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::optional<std::string>& stage() const noexcept { return stage_; }

  // Same error re-tagged with a pipeline stage.
  Error with_stage(std::string stage) const {
    return Error(code_, what(), std::move(stage));
  }

 private:
  ErrorCode code_;
  std::optional<std::string> stage_;
};

}  // namespace persona
