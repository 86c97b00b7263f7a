#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vbp {

enum class ErrorCode {
  // audio_io
  MalformedRiff,
  UnsupportedEncoding,
  TruncatedData,
  EmptyClip,
  InvalidFrequency,
  // dsp
  InvalidLength,
  InvalidSigma,
  EmptyFrame,
  ClipTooShort,
  DegenerateSpectrum,
  // features
  WrongFrameLength,
  ZeroVariance,
  TooFewSamples,
  NoSegments,
  // dataset
  OutOfPhysiologicRange,
  MissingFeatures,
  DuplicateId,
  DegenerateFeature,
  TooFewExamples,
  InvalidProfile,
  ConstantColumn,
  // relieff
  ClassTooSmall,
  EmptyFeatureSet,
  AllFeaturesDropped,
  // textcodec
  NonFiniteValue,
  UnknownId,
  InvalidSequence,
  // model
  InvalidConfig,
  IdOutOfRange,
  LengthExceedsMax,
  MissingCache,
  VersionMismatch,
  ChecksumMismatch,
  ShapeMismatch,
  // training
  LengthMismatch,
  Empty,
  EmptyDataset,
  Diverged,
  // cli / io
  MissingArtifacts,
  Io,
  SchemaMismatch,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vbp
