#pragma once

#include <stdexcept>
#include <string>

namespace emocross {

// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes disagree with an operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A structural setting is invalid (group counts, rates, frequencies, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data violates its contract (labels, file contents, short signals).
class DataError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API precondition that cannot be expressed in types.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or other numerical failure during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Checkpoint failures are kept as distinct kinds so callers can react.
class CheckpointVersionError : public Error {
 public:
  using Error::Error;
};

class CheckpointCorruptError : public Error {
 public:
  using Error::Error;
};

class CheckpointArchError : public Error {
 public:
  using Error::Error;
};

// A stage of a multi-stage run failed; message names the stage index.
class PipelineError : public Error {
 public:
  using Error::Error;
};

}  // namespace emocross
