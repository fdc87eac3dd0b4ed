#pragma once

#include <stdexcept>
#include <string>

namespace cfdepth {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not satisfy an operation's shape rules.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation precondition (wrong origin, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An operation parameter is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A masked reduction found no valid element.
class EmptyBatchError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset or image file could not be ingested.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf or divergence detected.
class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace cfdepth
