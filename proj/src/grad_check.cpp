#include "iconify/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iconify/rng.hpp"

namespace iconify {

namespace {

double evaluate(const ScalarProgram& f, std::span<const Tensor<double>> points, std::vector<std::int8_t>* kinks) {
  Tape<double> tape;
  std::vector<Var<double>> inputs;
  inputs.reserve(points.size());
  for (const auto& p : points) inputs.push_back(tape.constant(p));
  const double v = f(tape, inputs).value().item();
  if (!std::isfinite(v)) throw NonFiniteError("grad_check: program is not finite at the probe point");
  if (kinks) *kinks = kink_signature(tape);
  return v;
}

std::int8_t sign_of(double v) { return static_cast<std::int8_t>((v > 0) - (v < 0)); }

}  // namespace

std::vector<std::int8_t> kink_signature(const Tape<double>& tape) {
  std::vector<std::int8_t> sig;
  for (NodeId id = 0; id < tape.size(); ++id) {
    const std::string& op = tape.op(id);
    if (op == "relu" || op == "leaky_relu") {
      for (double v : tape.value(tape.parents(id)[0]).data()) sig.push_back(sign_of(v));
    } else if (op == "l1_loss") {
      const auto& a = tape.value(tape.parents(id)[0]);
      const auto& b = tape.value(tape.parents(id)[1]);
      for (std::size_t i = 0; i < a.size(); ++i) sig.push_back(sign_of(a[i] - b[i]));
    }
  }
  return sig;
}

GradCheckResult grad_check(const ScalarProgram& f, std::span<const Tensor<double>> points,
                           const GradCheckOptions& options) {
  if (!(options.step > 0)) throw std::invalid_argument("grad_check: step must be positive");

  Tape<double> tape;
  std::vector<Var<double>> inputs;
  for (const auto& p : points) inputs.push_back(tape.leaf(p));
  const Var<double> root = f(tape, inputs);
  if (!std::isfinite(root.value().item())) throw NonFiniteError("grad_check: program is not finite at the point");
  const GradientMap<double> grads = tape.backward(root);

  GradCheckResult result;
  Rng rng(options.seed);
  std::vector<Tensor<double>> probe(points.begin(), points.end());
  for (std::size_t t = 0; t < points.size(); ++t) {
    const std::size_t n = points[t].size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input && *options.max_coords_per_input < n) {
      for (std::size_t i = 0; i < *options.max_coords_per_input; ++i) {
        std::swap(coords[i], coords[i + rng.index(n - i)]);
      }
      coords.resize(*options.max_coords_per_input);
    }
    const bool has_grad = grads.contains(inputs[t]);
    for (std::size_t idx : coords) {
      const double analytic = has_grad ? grads.at(inputs[t])[idx] : 0.0;
      const double orig = probe[t][idx];
      double step = options.step;
      double numeric = 0.0;
      bool smooth = false;
      std::vector<std::int8_t> sig_up, sig_down;
      auto* up_sig = options.kink_aware ? &sig_up : nullptr;
      auto* down_sig = options.kink_aware ? &sig_down : nullptr;
      while (true) {
        probe[t][idx] = orig + step;
        const double up = evaluate(f, probe, up_sig);
        probe[t][idx] = orig - step;
        const double down = evaluate(f, probe, down_sig);
        probe[t][idx] = orig;
        numeric = (up - down) / (2.0 * step);
        smooth = sig_up == sig_down;
        if (smooth || step / 10.0 < options.min_step) break;
        step /= 10.0;
        ++result.kink_reprobes;
      }
      if (!smooth) {
        ++result.kink_skipped;
        continue;
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.coords_checked;
      if (result.coords_checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = t;
        result.worst_index = idx;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<Var<double>(Tape<double>&, const Var<double>&)>& f,
                           const Tensor<double>& point, double step) {
  ScalarProgram wrapped = [&f](Tape<double>& tape, std::span<const Var<double>> in) { return f(tape, in[0]); };
  GradCheckOptions options;
  options.step = step;
  return grad_check(wrapped, std::span<const Tensor<double>>(&point, 1), options);
}

}  // namespace iconify
