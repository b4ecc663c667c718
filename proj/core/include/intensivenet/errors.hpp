#pragma once

#include <stdexcept>
#include <string>

namespace inet {

/// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shape/axis mismatch between tensors or between a tensor and a kernel.
struct DimensionError : Error {
  using Error::Error;
};

/// Invalid configuration value (bad stride, geometry too small, ...).
struct ConfigError : Error {
  using Error::Error;
};

/// API misuse: a precondition on the call itself was violated.
struct ContractError : Error {
  using Error::Error;
};

/// Operation attempted in a state that does not permit it (e.g. a
/// second backward pass on an already-consumed tape).
struct StateError : Error {
  using Error::Error;
};

/// CTC target cannot be produced by any alignment of the given length.
struct InfeasibleError : Error {
  InfeasibleError(const std::string& msg, int min_frames)
      : Error(msg), required_min_frames(min_frames) {}
  int required_min_frames;
};

/// Problem instance exceeds a hard size guard.
struct SizeError : Error {
  using Error::Error;
};

/// Malformed input file (IDX, RunConfig, line manifest, ...).
struct ParseError : Error {
  using Error::Error;
};

/// Filesystem-level failure.
struct IoError : Error {
  using Error::Error;
};

/// Training diverged (non-finite loss).
struct DivergenceError : Error {
  using Error::Error;
};

/// Checkpoint load failures, each distinct per the file-format contract.
struct CheckpointError : Error {
  using Error::Error;
};
struct ManifestError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct ShapeMismatchError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct TruncatedBlobError : CheckpointError {
  using CheckpointError::CheckpointError;
};

/// Synthetic line generation failure (canvas too small for the glyphs).
struct GenerationError : Error {
  using Error::Error;
};

}  // namespace inet
