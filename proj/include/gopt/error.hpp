#pragma once

#include <stdexcept>
#include <string>

namespace gopt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree with an operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where finite values are required, failed gradient checks, undefined correlations.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a precondition (non-scalar loss, empty dataset, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Data-side errors. The CLI maps all of these to exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

class InventoryError : public DataError {
 public:
  using DataError::DataError;
};

class SegmentError : public DataError {
 public:
  using DataError::DataError;
};

class AlignmentError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class LabelError : public DataError {
 public:
  using DataError::DataError;
};

/// An utterance is longer than the model's positional capacity.
class CapacityError : public DataError {
 public:
  using DataError::DataError;
};

/// Bad configuration key or value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gopt
