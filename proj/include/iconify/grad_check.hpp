#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "iconify/tape.hpp"

namespace iconify {

/// A scalar-valued program over one or more differentiable inputs.
using ScalarProgram = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// When set, at most this many coordinates per input are probed (chosen by `seed`).
  std::optional<std::size_t> max_coords_per_input;
  std::uint64_t seed = 0;
  /// When the +step and -step evaluations fall on different sides of a
  /// relu/leaky_relu/l1 kink, re-probe that coordinate with step/10, down to
  /// `min_step`; coordinates still straddling a kink there are skipped.
  bool kink_aware = true;
  double min_step = 1e-9;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kink_reprobes = 0;
  std::size_t kink_skipped = 0;
};

/// Sign pattern of every kink-op input on the tape: relu/leaky_relu inputs and
/// l1_loss differences.
std::vector<std::int8_t> kink_signature(const Tape<double>& tape);

/// Max over probed coordinates of |analytic - central difference| /
/// max(|analytic|, |numeric|, 1e-8). Throws NonFiniteError if the program is
/// not finite at the point.
GradCheckResult grad_check(const ScalarProgram& f, std::span<const Tensor<double>> points,
                           const GradCheckOptions& options = {});

GradCheckResult grad_check(const std::function<Var<double>(Tape<double>&, const Var<double>&)>& f,
                           const Tensor<double>& point, double step = 1e-5);

}  // namespace iconify
