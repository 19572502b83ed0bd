#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace iconify {

struct CheckRow {
  std::string name;       // e.g. "grad activation/relu", "oracle conv2d"
  std::string op;         // op family the row exercises
  double error = 0.0;     // max relative (gradients) or absolute (oracles) error
  double threshold = 0.0;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  /// Only the 32x32 composed-objective check and fewer probed coordinates.
  bool fast = false;
  /// Deliberately corrupt the gradient rule of one op family (doubles it) to
  /// confirm the suite catches it.
  std::optional<std::string> inject_fault;
  std::uint64_t seed = 0;
};

/// Op families accepted by `inject_fault`.
std::vector<std::string> fault_targets();

/// Finite-difference gradient checks of every differentiable op and of the
/// composed generator objective, conv/transpose-conv against the naive-loop
/// oracle, and the adjoint identity.
std::vector<CheckRow> run_verification(const VerifyOptions& options);

std::string format_check_table(const std::vector<CheckRow>& rows);

}  // namespace iconify
