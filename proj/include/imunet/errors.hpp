#pragma once

#include <stdexcept>

namespace imunet {

// Common base so callers (notably the CLI) can map failures to exit codes
// without enumerating every concrete cause.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape disagreements.
struct DimensionError : Error {
  using Error::Error;
};

// Violated operation preconditions (non-scalar loss, pool window larger than
// the padded input, single-element batch-norm, ...).
struct ContractError : Error {
  using Error::Error;
};

// Malformed input data: CSV parse failures, non-monotonic timestamps,
// non-unit quaternions, empty trajectory overlap.
struct ValidationError : Error {
  using Error::Error;
};

// Bad user-facing configuration: unknown profile or architecture, missing
// ground truth, dimensionality mismatches between flags and data.
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem failures outside parsing (cannot open/create/rename).
struct IoError : Error {
  using Error::Error;
};

// Checkpoint failures, split into variants so callers can tell a short read
// from garbage from a format-version mismatch.
struct CheckpointError : Error {
  using Error::Error;
};
struct CheckpointCorruptError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};

}  // namespace imunet
