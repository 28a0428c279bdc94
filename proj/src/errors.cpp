#include "refsketch/errors.hpp"

namespace refsketch {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::ZeroSizeImage: return "ZeroSizeImage";
    case ErrorKind::InvalidTarget: return "InvalidTarget";
    case ErrorKind::WriteError: return "WriteError";
    case ErrorKind::InvalidImage: return "InvalidImage";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ReductionMismatch: return "ReductionMismatch";
    case ErrorKind::ChannelMismatch: return "ChannelMismatch";
    case ErrorKind::ResolutionMismatch: return "ResolutionMismatch";
    case ErrorKind::UninitializedParams: return "UninitializedParams";
    case ErrorKind::TooSmall: return "TooSmall";
    case ErrorKind::EncoderNotFrozen: return "EncoderNotFrozen";
    case ErrorKind::ExtractorShapeMismatch: return "ExtractorShapeMismatch";
    case ErrorKind::ExtractorUnavailable: return "ExtractorUnavailable";
    case ErrorKind::OutOfRangeEpoch: return "OutOfRangeEpoch";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::NonFiniteTerm: return "NonFiniteTerm";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::InsufficientCorpus: return "InsufficientCorpus";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::IOError: return "IOError";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::AllCulled: return "AllCulled";
    case ErrorKind::EmptyDirectory: return "EmptyDirectory";
    case ErrorKind::IncompleteDataset: return "IncompleteDataset";
    case ErrorKind::CheckpointVersionMismatch: return "CheckpointVersionMismatch";
    case ErrorKind::DegenerateCovariance: return "DegenerateCovariance";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

}  // namespace refsketch
