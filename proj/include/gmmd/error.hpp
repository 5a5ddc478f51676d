#pragma once

#include <stdexcept>
#include <string>

namespace gmmd {

// Base of every error raised by the toolkit. The CLI maps UsageError to exit
// code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input (bad dimensions, non-finite values, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Not enough data to fit a standardizer.
class FitError : public Error {
 public:
  using Error::Error;
};

// Median pairwise distance of the anchor set is zero.
class DegenerateBandwidthError : public Error {
 public:
  using Error::Error;
};

// Fewer samples than the unbiased MMD estimator needs.
class SampleSizeError : public Error {
 public:
  using Error::Error;
};

// Correlation of a constant series.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

// Model loading or graph execution failure.
class InferenceError : public Error {
 public:
  using Error::Error;
};

// Cached data does not match its recorded digest.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Bad command line, missing file or run-spec schema violation.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace gmmd
