#include "vocalbp/error.hpp"

namespace vbp {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRiff: return "MalformedRiff";
    case ErrorCode::UnsupportedEncoding: return "UnsupportedEncoding";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::EmptyClip: return "EmptyClip";
    case ErrorCode::InvalidFrequency: return "InvalidFrequency";
    case ErrorCode::InvalidLength: return "InvalidLength";
    case ErrorCode::InvalidSigma: return "InvalidSigma";
    case ErrorCode::EmptyFrame: return "EmptyFrame";
    case ErrorCode::ClipTooShort: return "ClipTooShort";
    case ErrorCode::DegenerateSpectrum: return "DegenerateSpectrum";
    case ErrorCode::WrongFrameLength: return "WrongFrameLength";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::NoSegments: return "NoSegments";
    case ErrorCode::OutOfPhysiologicRange: return "OutOfPhysiologicRange";
    case ErrorCode::MissingFeatures: return "MissingFeatures";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::DegenerateFeature: return "DegenerateFeature";
    case ErrorCode::TooFewExamples: return "TooFewExamples";
    case ErrorCode::InvalidProfile: return "InvalidProfile";
    case ErrorCode::ConstantColumn: return "ConstantColumn";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::EmptyFeatureSet: return "EmptyFeatureSet";
    case ErrorCode::AllFeaturesDropped: return "AllFeaturesDropped";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::InvalidSequence: return "InvalidSequence";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IdOutOfRange: return "IdOutOfRange";
    case ErrorCode::LengthExceedsMax: return "LengthExceedsMax";
    case ErrorCode::MissingCache: return "MissingCache";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::MissingArtifacts: return "MissingArtifacts";
    case ErrorCode::Io: return "Io";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
  }
  return "Unknown";
}

}  // namespace vbp
