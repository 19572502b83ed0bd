#include "iconify/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "iconify/grad_check.hpp"
#include "iconify/networks.hpp"
#include "iconify/ops.hpp"
#include "iconify/oracles.hpp"
#include "iconify/rng.hpp"
#include "iconify/training.hpp"

namespace iconify {

namespace {

constexpr double kSmooth = 1e-6;
constexpr double kComposed = 1e-4;
constexpr double kOracle = 1e-6;

std::vector<std::string> kFamilies = {"add",        "sub",       "mul",           "scale",          "sum",
                                      "mean",       "l1_loss",   "mse_loss",      "conv2d",         "conv_transpose2d",
                                      "instance_norm", "activation", "pad_reflect", "resize_area"};

/// Same value, gradient doubled on the way back.
Var<double> corrupt(const Var<double>& v) {
  return v.tape().record(
      v.value(), {v.id()},
      [](const Tensor<double>& g, GradSink<double>& sink) {
        Tensor<double> twice = g;
        for (auto& e : twice.data()) e *= 2.0;
        sink.add(0, twice);
      },
      "fault");
}

/// Scalar probe: sum(out * R) with a fixed random R.
Var<double> project(const Var<double>& out, std::uint64_t seed) {
  if (out.value().size() == 1) return out;
  Rng rng(seed);
  return sum(mul(out, out.tape().constant(randn<double>(out.shape(), rng))));
}

Tensor<double> normal(Shape shape, Rng& rng) { return randn<double>(std::move(shape), rng); }

/// Values with |v| in [0.1, 1], so a step of 1e-5 never crosses 0.
Tensor<double> away_from_zero(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return t;
}

struct GradCase {
  std::string name;
  std::string family;
  double threshold;
  std::vector<Tensor<double>> points;
  std::function<Var<double>(std::span<const Var<double>>)> body;
};

std::vector<GradCase> op_cases(Rng& rng) {
  std::vector<GradCase> cs;
  const Shape s4{2, 3, 4, 5};
  auto two = [&](Shape sh) { return std::vector<Tensor<double>>{normal(sh, rng), normal(sh, rng)}; };

  cs.push_back({"add", "add", kSmooth, two(s4), [](auto in) { return add(in[0], in[1]); }});
  cs.push_back({"sub", "sub", kSmooth, two(s4), [](auto in) { return sub(in[0], in[1]); }});
  cs.push_back({"mul", "mul", kSmooth, two(s4), [](auto in) { return mul(in[0], in[1]); }});
  cs.push_back({"scale", "scale", kSmooth, {normal(s4, rng)}, [](auto in) { return scale(in[0], -1.7); }});
  cs.push_back({"sum", "sum", kSmooth, {normal(s4, rng)}, [](auto in) { return sum(mul(in[0], in[0])); }});
  cs.push_back({"mean", "mean", kSmooth, {normal(s4, rng)}, [](auto in) { return mean(mul(in[0], in[0])); }});
  {
    Tensor<double> a = normal(s4, rng);
    Tensor<double> b = a;
    const Tensor<double> off = away_from_zero(s4, rng);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += off[i];
    cs.push_back({"l1_loss", "l1_loss", kSmooth, {a, b}, [](auto in) { return l1_loss(in[0], in[1]); }});
  }
  cs.push_back({"mse_loss", "mse_loss", kSmooth, two(s4), [](auto in) { return mse_loss(in[0], in[1]); }});

  cs.push_back({"conv2d k3 s1 zero-pad1 +bias",
                "conv2d",
                kSmooth,
                {normal({2, 3, 6, 7}, rng), normal({4, 3, 3, 3}, rng), normal({4}, rng)},
                [](auto in) { return conv2d(in[0], in[1], std::optional(in[2]), 1, Padding::zeros(1)); }});
  cs.push_back({"conv2d k4 s2 zero-pad1",
                "conv2d",
                kSmooth,
                {normal({1, 2, 8, 8}, rng), normal({3, 2, 4, 4}, rng)},
                [](auto in) { return conv2d(in[0], in[1], std::optional<Var<double>>{}, 2, Padding::zeros(1)); }});
  cs.push_back({"conv2d k7 s1 reflect-pad3",
                "conv2d",
                kSmooth,
                {normal({1, 2, 8, 9}, rng), normal({3, 2, 7, 7}, rng)},
                [](auto in) { return conv2d(in[0], in[1], std::optional<Var<double>>{}, 1, Padding::reflect(3)); }});
  cs.push_back({"conv_transpose2d k4 s2 p1 +bias",
                "conv_transpose2d",
                kSmooth,
                {normal({2, 3, 4, 5}, rng), normal({3, 2, 4, 4}, rng), normal({2}, rng)},
                [](auto in) { return conv_transpose2d(in[0], in[1], std::optional(in[2]), 2, 1); }});
  cs.push_back({"conv_transpose2d k3 s1 p0",
                "conv_transpose2d",
                kSmooth,
                {normal({1, 2, 5, 4}, rng), normal({2, 3, 3, 3}, rng)},
                [](auto in) { return conv_transpose2d(in[0], in[1], std::optional<Var<double>>{}, 1, 0); }});
  cs.push_back({"instance_norm",
                "instance_norm",
                kSmooth,
                {normal({2, 3, 5, 4}, rng), normal({3}, rng), normal({3}, rng)},
                [](auto in) { return instance_norm(in[0], in[1], in[2], 1e-5); }});
  for (const Activation act :
       {Activation::relu(), Activation::leaky_relu(0.2), Activation::tanh(), Activation::sigmoid()}) {
    cs.push_back({"activation/" + to_string(act), "activation", kSmooth, {away_from_zero(s4, rng)},
                  [act](auto in) { return activation(in[0], act); }});
  }
  cs.push_back({"pad_reflect 3", "pad_reflect", kSmooth, {normal({1, 2, 6, 7}, rng)},
                [](auto in) { return pad_reflect(in[0], 3); }});
  cs.push_back({"resize_area 8x8->4x4", "resize_area", kSmooth, {normal({1, 2, 8, 8}, rng)},
                [](auto in) { return resize_area(in[0], 4, 4); }});
  cs.push_back({"resize_area 9x7->4x3", "resize_area", kSmooth, {normal({1, 2, 9, 7}, rng)},
                [](auto in) { return resize_area(in[0], 4, 3); }});
  cs.push_back({"resize_area 4x4->7x6", "resize_area", kSmooth, {normal({1, 2, 4, 4}, rng)},
                [](auto in) { return resize_area(in[0], 7, 6); }});
  return cs;
}

std::string describe(const GradCheckResult& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu coords; worst input %zu[%zu] analytic %.6g numeric %.6g", r.coords_checked,
                r.worst_input, r.worst_index, r.analytic, r.numeric);
  std::string out = buf;
  if (r.kink_reprobes > 0) {
    std::snprintf(buf, sizeof buf, "; %zu kink re-probes, %zu skipped", r.kink_reprobes, r.kink_skipped);
    out += buf;
  }
  return out;
}

CheckRow run_grad_case(const GradCase& c, bool fault, std::uint64_t seed) {
  ScalarProgram program = [&](Tape<double>&, std::span<const Var<double>> in) {
    Var<double> out = c.body(in);
    if (fault && out.requires_grad()) out = corrupt(out);
    return project(out, seed);
  };
  const GradCheckResult r = grad_check(program, c.points);
  const std::string detail = describe(r);
  return {"grad " + c.name, c.family, r.max_rel_error, c.threshold, r.max_rel_error < c.threshold, detail};
}

/// Full generator objective of a tiny CycleGAN, differentiated with respect to
/// both images and every parameter tensor of all four networks.
CheckRow composed_check(std::size_t resolution, std::size_t coords, const std::optional<std::string>& fault,
                        std::uint64_t seed) {
  NetConfig cfg;
  cfg.ngf = 2;
  cfg.ndf = 2;
  cfg.n_res_blocks = 1;
  const auto g_xy = build_generator<double>(cfg, resolution, derive_seed(seed, 1));
  const auto g_yx = build_generator<double>(cfg, resolution, derive_seed(seed, 2));
  const auto d_x = build_discriminator<double>(cfg, derive_seed(seed, 3));
  const auto d_y = build_discriminator<double>(cfg, derive_seed(seed, 4));
  // Spread weights beyond the N(0, 0.02) init so every layer contributes.
  std::vector<const ParameterSet<double>*> sets = {&g_xy.params, &g_yx.params, &d_x.params, &d_y.params};

  Rng rng(derive_seed(seed, 5));
  std::vector<Tensor<double>> points;
  points.push_back(rand_uniform<double>({1, 3, resolution, resolution}, rng, -0.9, 0.9));
  points.push_back(rand_uniform<double>({1, 3, resolution, resolution}, rng, -0.9, 0.9));
  for (const auto* set : sets) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      Tensor<double> t = set->tensor(i);
      const bool is_gain = set->name(i).ends_with(".g");
      for (auto& v : t.data()) v = is_gain ? 1.0 + 0.1 * rng.normal() : 0.3 * rng.normal();
      points.push_back(std::move(t));
    }
  }

  LossWeights w = preset_weights(Preset::bw_icons);
  ScalarProgram program = [&](Tape<double>&, std::span<const Var<double>> in) {
    std::size_t pos = 2;
    std::vector<BoundParams<double>> bound;
    for (const auto* set : sets) {
      std::vector<Var<double>> vars(in.begin() + static_cast<std::ptrdiff_t>(pos),
                                    in.begin() + static_cast<std::ptrdiff_t>(pos + set->size()));
      pos += set->size();
      bound.emplace_back(*set, std::move(vars));
    }
    Var<double> x = in[0], y = in[1];
    if (fault) {
      x = corrupt(x);
    }
    return cyclegan_generator_objective(bound[0], bound[1], bound[2], bound[3], cfg, x, y, w).total;
  };
  GradCheckOptions opts;
  opts.max_coords_per_input = coords;
  opts.seed = derive_seed(seed, 6);
  const GradCheckResult r = grad_check(program, points, opts);
  const std::string detail = describe(r);
  return {"grad cyclegan objective " + std::to_string(resolution) + "x" + std::to_string(resolution), "objective",
          r.max_rel_error, kComposed, r.max_rel_error < kComposed, detail};
}

struct ConvCombo {
  std::size_t n, c, k, h, w, kernel, stride, pad;
};

std::vector<ConvCombo> conv_combos(Rng& rng, std::size_t count) {
  std::vector<ConvCombo> out;
  while (out.size() < count) {
    ConvCombo cb;
    cb.n = 1 + rng.index(2);
    cb.c = 1 + rng.index(3);
    cb.k = 1 + rng.index(4);
    cb.kernel = 1 + rng.index(5);
    cb.stride = 1 + rng.index(3);
    cb.pad = rng.index(cb.kernel);
    cb.h = cb.kernel + rng.index(7);
    cb.w = cb.kernel + rng.index(7);
    out.push_back(cb);
  }
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<CheckRow> oracle_checks(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 20));
  const auto combos = conv_combos(rng, 24);
  double conv_err = 0.0, convt_err = 0.0, adj_err = 0.0;
  std::size_t adj_count = 0;
  for (const auto& cb : combos) {
    const Tensor<double> x = normal({cb.n, cb.c, cb.h, cb.w}, rng);
    const Tensor<double> w = normal({cb.k, cb.c, cb.kernel, cb.kernel}, rng);
    const Tensor<double> b = normal({cb.k}, rng);
    Tape<double> tape;
    const Tensor<double> fast = conv2d(tape.constant(x), tape.constant(w), std::optional(tape.constant(b)), cb.stride,
                                       Padding::zeros(cb.pad))
                                    .value();
    const Tensor<double> slow = oracle::conv2d(x, w, &b, cb.stride, cb.pad);
    conv_err = std::max(conv_err, max_abs_diff(fast, slow));

    // Transpose conv maps the conv output shape back; w read as in x out.
    const Tensor<double> yt = normal(slow.shape(), rng);
    const Tensor<double> bt = normal({cb.c}, rng);
    const Tensor<double> tfast =
        conv_transpose2d(tape.constant(yt), tape.constant(w), std::optional(tape.constant(bt)), cb.stride, cb.pad)
            .value();
    const Tensor<double> tslow = oracle::conv_transpose2d(yt, w, &bt, cb.stride, cb.pad);
    convt_err = std::max(convt_err, max_abs_diff(tfast, tslow));

    // <conv(x), y> == <x, conv^T(y)> whenever the transpose reproduces x's extent.
    if ((cb.h + 2 * cb.pad - cb.kernel) % cb.stride == 0 && (cb.w + 2 * cb.pad - cb.kernel) % cb.stride == 0) {
      const Tensor<double> cx =
          conv2d(tape.constant(x), tape.constant(w), std::optional<Var<double>>{}, cb.stride, Padding::zeros(cb.pad)).value();
      const Tensor<double> ty = conv_transpose2d(tape.constant(yt), tape.constant(w), std::optional<Var<double>>{}, cb.stride, cb.pad)
                                    .value();
      const double lhs = oracle::dot(cx, yt), rhs = oracle::dot(x, ty);
      adj_err = std::max(adj_err, std::abs(lhs - rhs));
      ++adj_count;
    }
  }
  const std::string n = std::to_string(combos.size()) + " random shape/stride/padding combos";
  return {
      {"oracle conv2d", "conv2d", conv_err, kOracle, conv_err < kOracle, n},
      {"oracle conv_transpose2d", "conv_transpose2d", convt_err, kOracle, convt_err < kOracle, n},
      {"adjoint <conv x, y> = <x, conv^T y>", "conv_transpose2d", adj_err, kOracle, adj_count > 0 && adj_err < kOracle,
       std::to_string(adj_count) + " combos"},
  };
}

}  // namespace

std::vector<std::string> fault_targets() {
  std::vector<std::string> t = kFamilies;
  t.push_back("objective");
  return t;
}

std::vector<CheckRow> run_verification(const VerifyOptions& options) {
  if (options.inject_fault) {
    const auto t = fault_targets();
    if (std::find(t.begin(), t.end(), *options.inject_fault) == t.end()) {
      throw std::invalid_argument("unknown fault target '" + *options.inject_fault + "'");
    }
  }
  auto faulty = [&](const std::string& family) { return options.inject_fault && *options.inject_fault == family; };

  std::vector<CheckRow> rows;
  Rng rng(derive_seed(options.seed, 1));
  std::uint64_t k = 0;
  for (const auto& c : op_cases(rng)) rows.push_back(run_grad_case(c, faulty(c.family), derive_seed(options.seed, 2, k++)));

  const std::optional<std::string> objective_fault =
      faulty("objective") ? options.inject_fault : std::optional<std::string>{};
  if (options.fast) {
    rows.push_back(composed_check(32, 3, objective_fault, options.seed));
  } else {
    rows.push_back(composed_check(32, 12, objective_fault, options.seed));
    rows.push_back(composed_check(64, 3, objective_fault, options.seed));
  }
  for (auto& row : oracle_checks(options.seed)) rows.push_back(std::move(row));
  return rows;
}

std::string format_check_table(const std::vector<CheckRow>& rows) {
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-*s  %-12s  %-9s  %s\n", static_cast<int>(width), "check", "error", "threshold",
                "status");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %-12.3e  %-9.0e  %s  (%s)\n", static_cast<int>(width), r.name.c_str(), r.error,
                  r.threshold, r.passed ? "ok  " : "FAIL", r.detail.c_str());
    out += buf;
  }
  return out;
}

}  // namespace iconify
