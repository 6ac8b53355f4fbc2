#pragma once

#include <stdexcept>
#include <string>

namespace ecac {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class LabelRangeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (wrong rank, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or received.
class NumericError : public Error {
 public:
  using Error::Error;
};

class FrequencyError : public Error {
 public:
  using Error::Error;
};

class EmptySupervisionError : public Error {
 public:
  using Error::Error;
};

class NormalizationError : public Error {
 public:
  using Error::Error;
};

class RoleError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace ecac
