#pragma once

#include <stdexcept>
#include <string>

namespace dlmgp {

// Process exit codes used by the CLI. Each error type maps to one of them.
enum class ExitCode : int {
  kSuccess = 0,
  kInputError = 2,
  kNumericalFailure = 3,
  kSamplingFailure = 4,
};

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dlmgp
