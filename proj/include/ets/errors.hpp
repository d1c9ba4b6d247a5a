#pragma once

#include <stdexcept>
#include <string>

namespace ets {

// Error taxonomy shared by the library and the CLI. The CLI maps each class
// to a distinct exit code: usage 2, structural 3, numeric 4, I/O 5.

// Bad flags, bad argument combinations, out-of-range user input.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or contract violations: dimension mismatches, labels outside the
// declared range, non-SPD prior covariance, too few repeats, and so on.
struct StructuralError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Floating-point trouble at runtime: non-finite values, solver failure,
// particle blow-up, non-convergence.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing or unwritable files.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ets
