#pragma once

#include <stdexcept>
#include <string>

namespace saenet {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Shape or axis mismatch between tensors. Messages name the offending axis.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Invalid layer/block/architecture configuration (bad groups, reduction that
// does not divide the channel width, non-positive conv output, ...).
class ConfigError : public Error {
public:
  using Error::Error;
};

// Batch statistics cannot be formed (N*H*W < 2 in train mode).
class DegenerateBatchError : public Error {
public:
  using Error::Error;
};

// Bad data content: labels out of range, malformed records.
class DataError : public Error {
public:
  using Error::Error;
};

// File does not match the expected on-disk layout. Messages carry byte counts.
class FormatError : public DataError {
public:
  using DataError::DataError;
};

// API contract violation: non-scalar loss, epoch out of range, empty dataset,
// second backward pass over a consumed tape.
class ContractError : public Error {
public:
  using Error::Error;
};

// Non-finite values where finite ones are required. Messages name the
// parameter or the epoch/step where the failure happened.
class NumericError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace saenet
