#pragma once

#include <stdexcept>
#include <string>

namespace uncprop {

// Contract violations on arguments are reported as std::invalid_argument.
// The types below separate the failure classes the command line maps to exit codes.

/// Invalid or inconsistent run configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A required input file (dataset, checkpoint) is absent or unreadable.
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// NaN/Inf produced during training or evaluation.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace uncprop
