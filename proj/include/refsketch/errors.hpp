#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace refsketch {

/// Every failure the library reports carries one of these kinds so callers
/// (and the CLI exit-code mapping) can branch without parsing messages.
enum class ErrorKind {
  MissingFile,
  DecodeError,
  ZeroSizeImage,
  InvalidTarget,
  WriteError,
  InvalidImage,
  ShapeMismatch,
  ReductionMismatch,
  ChannelMismatch,
  ResolutionMismatch,
  UninitializedParams,
  TooSmall,
  EncoderNotFrozen,
  ExtractorShapeMismatch,
  ExtractorUnavailable,
  OutOfRangeEpoch,
  OutOfRange,
  NonFiniteTerm,
  NonFiniteLoss,
  InsufficientCorpus,
  DivergenceDetected,
  IOError,
  EmptyInput,
  AllCulled,
  EmptyDirectory,
  IncompleteDataset,
  CheckpointVersionMismatch,
  DegenerateCovariance,
  InvalidConfig,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace refsketch
