#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace avatarfit {

enum class ErrorCode {
  DimensionMismatch,
  AllFacesDegenerate,
  InvalidMesh,
  EmptyResult,
  NonSimpleBoundary,
  SingularBlend,
  IsolatedVertex,
  Diverged,
  NoCorrespondences,
  SingularSystem,
  BehindCamera,
  DegenerateGeometry,
  InsufficientViews,
  NoConsensus,
  EmptyMask,
  MissingUVs,
  ParseError,
  UnsupportedFeature,
  ManifestError,
  ShapeMismatch,
  BlobTruncated,
  InvariantViolation,
  InvalidArgument,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every recoverable failure in the library is reported through this type.
/// The code is machine-readable (the CLI serializes it as JSON on stderr).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace avatarfit
