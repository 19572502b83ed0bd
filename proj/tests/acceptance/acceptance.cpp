// One PASS/FAIL line per acceptance criterion. Usage: acceptance <work-dir>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/naive.hpp"
#include "iconify/checkpoint.hpp"
#include "iconify/coco.hpp"
#include "iconify/config.hpp"
#include "iconify/dataset.hpp"
#include "iconify/training.hpp"
#include "iconify/verify.hpp"

using namespace iconify;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

fs::path g_work;
int g_failures = 0;

void report(int criterion, bool ok, const std::string& detail) {
  std::printf("criterion %d %s: %s\n", criterion, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Runs the CLI with output captured to `log`; returns the exit code.
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ICONIFY_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

using LogLine = std::map<std::string, double>;

LogLine parse_terms(const std::string& line) {
  LogLine out;
  std::istringstream ss(line.substr(line.find(' ', line.find(' ') + 1) + 1));
  std::string kv;
  while (std::getline(ss, kv, ',')) {
    const auto eq = kv.find('=');
    out[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
  }
  return out;
}

std::vector<LogLine> read_log(const fs::path& p) {
  std::vector<LogLine> lines;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) lines.push_back(parse_terms(l));
  return lines;
}

double window_mean(const std::vector<LogLine>& log, std::size_t begin, std::size_t n,
                   const std::vector<std::string>& terms) {
  double s = 0;
  for (std::size_t i = begin; i < begin + n; ++i)
    for (const auto& t : terms) s += log.at(i).at(t);
  return s / static_cast<double>(n);
}

double mean_abs_diff(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(double(a.pixels[i]) - double(b.pixels[i]));
  return s / 255.0 / static_cast<double>(a.pixels.size());
}

NetConfig tiny_net() {
  NetConfig c;
  c.ngf = 4;
  c.ndf = 4;
  return c;
}

// ---------------------------------------------------------------------------

void gradient_integrity() {
  const auto t0 = Clock::now();
  const auto rows = run_verification(VerifyOptions{});
  const double elapsed = seconds_since(t0);
  std::size_t grads = 0, failed = 0;
  bool objective = false, thresholds = true;
  double worst = 0;
  for (const auto& r : rows) {
    if (!r.name.starts_with("grad ")) continue;
    ++grads;
    failed += !r.passed;
    worst = std::max(worst, r.error);
    const bool composed = r.op == "objective";
    objective |= composed;
    thresholds &= r.threshold <= (composed ? 1e-4 : 1e-6);
  }
  const bool ok = grads >= 20 && failed == 0 && objective && thresholds && elapsed < 60.0;
  report(1, ok,
         std::to_string(grads) + " gradient checks, " + std::to_string(failed) + " failed, worst rel error " +
             fmt("%.3g", worst) + ", composed objective " + (objective ? "checked" : "missing") + ", " +
             fmt("%.1f s", elapsed));
}

void oracle_equivalence() {
  Rng rng(2024);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.uniform() * static_cast<double>(hi - lo + 1)) % (hi - lo + 1);
  };
  using D = Var<double>;
  double worst_conv = 0, worst_tconv = 0, worst_adj = 0;
  std::size_t combos = 0, adjoint = 0;
  std::uint64_t seed = 1;
  for (int i = 0; i < 24; ++i) {
    const std::size_t n = pick(1, 2), c = pick(1, 4), k = pick(1, 4), kernel = pick(1, 5), stride = pick(1, 3);
    const std::size_t pad = pick(0, kernel - 1), h = pick(kernel, 9), w = pick(kernel, 9);
    const auto x = naive::randn({n, c, h, w}, seed++);
    const auto wt = naive::randn({k, c, kernel, kernel}, seed++);
    const auto b = naive::randn({k}, seed++);
    Tape<double> tape;
    const auto y = conv2d(tape.constant(x), tape.constant(wt), std::optional<D>(tape.constant(b)), stride,
                          Padding::zeros(pad))
                       .value();
    worst_conv = std::max(worst_conv, naive::max_abs_diff(y, naive::conv2d(x, wt, &b, stride, pad)));

    // Transposed conv maps the k-channel output back to c channels; kernels are k x c.
    const auto v = naive::randn(y.shape(), seed++);
    const auto xt = naive::randn({n, c, h, w}, seed++);
    const auto tc = conv_transpose2d(tape.constant(v), tape.constant(wt), std::optional<D>{}, stride, pad).value();
    worst_tconv = std::max(worst_tconv, naive::max_abs_diff(tc, naive::conv_transpose2d(v, wt, nullptr, stride, pad)));

    // <conv x, v> = <x, conv^T v> with the same kernel and no bias.
    if (tc.shape() == xt.shape()) {
      const auto cx = conv2d(tape.constant(xt), tape.constant(wt), std::optional<D>{}, stride, Padding::zeros(pad)).value();
      const double lhs = naive::dot(cx, v), rhs = naive::dot(xt, tc);
      worst_adj = std::max(worst_adj, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
      ++adjoint;
    }
    ++combos;
  }
  const auto rows = run_verification(VerifyOptions{.fast = true, .inject_fault = std::nullopt, .seed = 0});
  bool suite = true;
  for (const auto& r : rows)
    if (r.name.starts_with("oracle") || r.name.starts_with("adjoint")) suite &= r.passed;
  const bool ok = combos >= 20 && adjoint >= 10 && worst_conv < 1e-6 && worst_tconv < 1e-6 && worst_adj < 1e-6 && suite;
  report(2, ok,
         std::to_string(combos) + " random combos, conv2d max diff " + fmt("%.2g", worst_conv) +
             ", conv_transpose2d " + fmt("%.2g", worst_tconv) + ", adjoint " + fmt("%.2g", worst_adj) + " over " +
             std::to_string(adjoint) + ", verify oracle rows " + (suite ? "pass" : "fail"));
}

void dataset_counts() {
  const std::vector<Image> icons883(883, Image(8, 8, Rgb{0, 0, 0}));
  const std::vector<Image> icons72(72, Image(8, 8, Rgb{0, 0, 0}));
  AugmentParams k20;
  k20.copies = 20;
  const std::size_t a = augment_icons(icons883, AugmentParams{}, 0).size();
  const std::size_t b = augment_icons(icons72, k20, 0).size();

  const fs::path fixture = fs::path(ICONIFY_FIXTURES) / "coco_mini";
  std::size_t kept = 0, small = 0, empty = 0, unfiltered = 0, min_area_ok = 0;
  for_each_annotated_image(fixture / "annotations.json", fixture / "images", [&](const AnnotatedImage& img) {
    const auto r = extract_objects(img, kDefaultMinArea);
    kept += r.cutouts.size();
    small += r.skipped_small;
    empty += r.skipped_empty;
    unfiltered += extract_objects(img, 0).cutouts.size();
    for (const auto& inst : img.instances) min_area_ok += inst.mask.area() >= kDefaultMinArea;
  });
  constexpr std::size_t kFixtureCutouts = 37;
  const bool ok = a == 8830 && b == 1440 && kept == kFixtureCutouts && small > 0 && unfiltered == kept + small &&
                  min_area_ok == kept;
  report(3, ok,
         "883 x 10 -> " + std::to_string(a) + ", 72 x 20 -> " + std::to_string(b) + ", fixture " +
             std::to_string(kept) + " cutouts (expected " + std::to_string(kFixtureCutouts) + "), " +
             std::to_string(small) + " below min area, " + std::to_string(empty) + " empty, " +
             std::to_string(unfiltered) + " unfiltered");
}

struct SmokeRun {
  int code = -1;
  double seconds = 0;
  fs::path dir;
};

SmokeRun smoke_train(const std::string& name) {
  SmokeRun r;
  r.dir = g_work / name;
  const auto t0 = Clock::now();
  r.code = cli("--output-dir " + r.dir.string() + " --config " + (fs::path(ICONIFY_CONFIGS) / "smoke.cfg").string() +
                   " train",
               g_work / (name + ".out"));
  r.seconds = seconds_since(t0);
  return r;
}

fs::path write_probe_inputs() {
  const fs::path dir = g_work / "probe";
  fs::create_directories(dir);
  const auto imgs = make_shape_images(ShapeKind::filled_squares, 8, 32, 4242);
  for (std::size_t i = 0; i < imgs.size(); ++i) write_png(dir / ("p" + std::to_string(i) + ".png"), imgs[i]);
  return dir;
}

std::string probe_args(const fs::path& dir) {
  std::string s;
  for (int i = 0; i < 8; ++i) s += " " + (dir / ("p" + std::to_string(i) + ".png")).string();
  return s;
}

void smoke_cyclegan(const SmokeRun& run, const fs::path& probe) {
  const auto log = read_log(run.dir / "loss.log");
  if (run.code != 0 || log.size() != 200) {
    report(4, false, "train exit " + std::to_string(run.code) + ", " + std::to_string(log.size()) + " log lines");
    return;
  }
  const double first = window_mean(log, 0, 20, {"cyc_x", "cyc_y"});
  const double last = window_mean(log, 180, 20, {"cyc_x", "cyc_y"});
  const double ratio = last / first;

  const std::string ckpt = (run.dir / "checkpoints" / "stage0_32.ckpt").string();
  const int fwd = cli("--output-dir " + (g_work / "conv_fwd").string() + " iconify --checkpoint " + ckpt +
                          probe_args(probe),
                      g_work / "conv_fwd.out");
  const int bwd = cli("--output-dir " + (g_work / "conv_bwd").string() + " iconify --direction icon2photo --checkpoint " +
                          ckpt + probe_args(probe),
                      g_work / "conv_bwd.out");
  double from_identity = 0, between = 0;
  for (int i = 0; i < 8; ++i) {
    const std::string stem = "p" + std::to_string(i);
    const Image in = read_png(probe / (stem + ".png"));
    const Image a = read_png(g_work / "conv_fwd" / (stem + ".iconified.png"));
    const Image b = read_png(g_work / "conv_bwd" / (stem + ".photo.png"));
    from_identity += mean_abs_diff(in, a) / 8;
    between += mean_abs_diff(a, b) / 8;
  }
  const bool ok = fwd == 0 && bwd == 0 && ratio <= 0.5 && from_identity > 0.05 && between > 0.01 && run.seconds < 600;
  report(4, ok,
         "cycle loss last20/first20 = " + fmt("%.3f", ratio) + " (" + fmt("%.4f", first) + " -> " +
             fmt("%.4f", last) + "), mean |G(x) - x| = " + fmt("%.3f", from_identity) +
             " of full scale, photo2icon vs icon2photo " + fmt("%.3f", between) + ", " + fmt("%.1f s", run.seconds));
}

void smoke_unit() {
  const auto cfg = load_run_config(fs::path(ICONIFY_CONFIGS) / "smoke_unit.cfg");
  const auto schedule = cfg.schedule();
  const auto xs = make_dataset(DomainRole::photo_x,
                               make_shape_images(ShapeKind::filled_squares, cfg.synthetic_count, cfg.synthetic_size,
                                                 derive_seed(cfg.seed, 100)));
  const auto ys = make_dataset(DomainRole::target_y,
                               make_shape_images(ShapeKind::outlined_circles, cfg.synthetic_count,
                                                 cfg.synthetic_size, derive_seed(cfg.seed, 101)));
  AnyModel model = make_unit<float>(cfg.net, cfg.adam, schedule.stages.front().resolution, cfg.seed);
  const ParameterSet<float> shared_init = std::get<UnitModel<float>>(model).nets.shared;
  RunState state;
  state.data_rng = Rng(derive_seed(cfg.seed, 200));
  std::vector<LogLine> log;
  std::size_t mismatched_steps = 0;
  RunOptions opts;
  opts.batch_size = cfg.batch_size;
  opts.base_lr = cfg.adam.lr;
  opts.on_step = [&](const StepRecord& r) {
    LogLine l;
    for (const auto& [n, v] : r.report.terms) l[n] = v;
    log.push_back(l);
    const auto& nets = std::get<UnitModel<float>>(model).nets;
    const ParameterSet<float> via_x = nets.shared_view(Domain::x);
    const ParameterSet<float> via_y = nets.shared_view(Domain::y);
    if (!(via_x == via_y) || &nets.shared_view(Domain::x) != &nets.shared_view(Domain::y)) ++mismatched_steps;
  };
  const auto t0 = Clock::now();
  run_coarse_to_fine(model, state, schedule, xs, ys, cfg.weights, opts);
  const bool moved = !(std::get<UnitModel<float>>(model).nets.shared == shared_init);
  const double first = window_mean(log, 0, 20, {"rec_x", "rec_y"});
  const double last = window_mean(log, log.size() - 20, 20, {"rec_x", "rec_y"});
  const double drop = 1.0 - last / first;
  const bool ok = log.size() == 200 && drop >= 0.30 && mismatched_steps == 0 && moved;
  report(5, ok,
         "reconstruction term down " + fmt("%.1f%%", 100 * drop) + " (" + fmt("%.4f", first) + " -> " +
             fmt("%.4f", last) + "), shared block identical across paths after " +
             std::to_string(log.size() - mismatched_steps) + "/" + std::to_string(log.size()) + " steps" +
             (moved ? ", shared block trained" : ", shared block never updated") + ", " +
             fmt("%.1f s", seconds_since(t0)));
}

std::vector<LogLine> collect(AnyModel& model, RunState& state, const StageSchedule& schedule, const DomainDataset& xs,
                             const DomainDataset& ys, RunOptions opts) {
  std::vector<LogLine> log;
  opts.on_step = [&](const StepRecord& r) {
    LogLine l;
    for (const auto& [n, v] : r.report.terms) l[n] = v;
    log.push_back(l);
  };
  run_coarse_to_fine(model, state, schedule, xs, ys, LossWeights{}, opts);
  return log;
}

double log_distance(const std::vector<LogLine>& a, const std::vector<LogLine>& b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return INFINITY;
    for (const auto& [k, v] : a[i]) worst = std::max(worst, std::abs(v - b[i].at(k)));
  }
  return worst;
}

std::vector<ParameterSet<float>> all_params(const AnyModel& m) {
  if (const auto* c = std::get_if<CycleGanModel<float>>(&m))
    return {c->g_xy.params, c->g_yx.params, c->d_x.params, c->d_y.params};
  const auto& u = std::get<UnitModel<float>>(m);
  return {u.nets.e_x, u.nets.e_y, u.nets.g_x, u.nets.g_y, u.nets.shared, u.nets.d_x.params, u.nets.d_y.params};
}

void coarse_to_fine_contract() {
  const fs::path dir = g_work / "c2f";
  fs::create_directories(dir);
  const auto xs = make_dataset(DomainRole::photo_x, make_shape_images(ShapeKind::filled_squares, 6, 128, 1));
  const auto ys = make_dataset(DomainRole::target_y, make_shape_images(ShapeKind::outlined_circles, 6, 128, 2));
  const StageSchedule schedule{{{32, 6}, {64, 4}, {128, 2}}};

  std::size_t boundaries = 0, carried = 0;
  double worst_resume = 0;
  for (int kind = 0; kind < 2; ++kind) {
    auto fresh = [&] {
      RunState s;
      s.data_rng = Rng(77);
      return std::make_pair(kind == 0 ? AnyModel(make_cyclegan<float>(tiny_net(), AdamHyper{}, 32, 5, 4))
                                      : AnyModel(make_unit<float>(tiny_net(), AdamHyper{}, 32, 5)),
                            s);
    };
    const fs::path kdir = dir / std::to_string(kind);

    auto [straight, s0] = fresh();
    std::map<std::size_t, std::vector<ParameterSet<float>>> ends, begins;
    RunOptions opts;
    opts.checkpoint_dir = kdir;
    opts.on_stage_end = [&](std::size_t i, const AnyModel& m) { ends[i] = all_params(m); };
    opts.on_stage_begin = [&](std::size_t i, const AnyModel& m) { begins[i] = all_params(m); };
    const auto full = collect(straight, s0, schedule, xs, ys, opts);
    for (std::size_t i = 0; i + 1 < schedule.stages.size(); ++i) {
      ++boundaries;
      carried += ends.at(i) == begins.at(i + 1);
    }

    // Interrupt mid-stage, round-trip through a file, continue.
    auto [part, s1] = fresh();
    RunOptions stop;
    stop.max_steps = 8;
    auto log = collect(part, s1, schedule, xs, ys, stop);
    save_checkpoint(kdir / "mid.ckpt", part, s1);
    auto mid = load_checkpoint(kdir / "mid.ckpt");
    const auto rest = collect(mid.model, mid.state, schedule, xs, ys, {});
    log.insert(log.end(), rest.begin(), rest.end());
    worst_resume = std::max(worst_resume, log_distance(log, full));

    // Resume from the end-of-stage-0 checkpoint.
    auto stage0 = load_checkpoint(kdir / "stage0_32.ckpt");
    const auto tail = collect(stage0.model, stage0.state, schedule, xs, ys, {});
    worst_resume = std::max(worst_resume,
                            log_distance(tail, std::vector<LogLine>(full.begin() + schedule.stages[0].iterations,
                                                                    full.end())));
    if (!(all_params(stage0.model) == all_params(straight)) || !(all_params(mid.model) == all_params(straight)))
      worst_resume = INFINITY;
  }
  const bool ok = carried == boundaries && worst_resume <= 1e-6;
  report(6, ok,
         std::to_string(carried) + "/" + std::to_string(boundaries) +
             " stage boundaries carried bitwise (CycleGAN and UNIT), resumed log max |diff| " +
             fmt("%.3g", worst_resume) + ", final parameters " + (std::isfinite(worst_resume) ? "equal" : "differ"));
}

void identity_presets() {
  const auto x = to_tensor(make_shape_images(ShapeKind::filled_squares, 1, 32, 3)[0]);
  const auto y = to_tensor(make_shape_images(ShapeKind::outlined_circles, 1, 32, 3)[0]);
  auto step = [&](const LossWeights& w) {
    auto m = make_cyclegan<float>(tiny_net(), AdamHyper{}, 32, 0);
    return cyclegan_train_step(m, x, y, w);
  };
  const auto bw = step(preset_weights(Preset::bw_icons));
  const auto color = step(preset_weights(Preset::color_logos));
  LossWeights off = preset_weights(Preset::bw_icons);
  off.lambda_idt = 0.0;
  const auto none = step(off);

  const double raw = bw.at("idt_x") + bw.at("idt_y");
  const bool weakened = bw.tape_scopes.count("identity") && raw > 0 &&
                        std::abs(bw.at("idt_weighted") - kWeakenedIdentityWeight * raw) <= 1e-6 * raw &&
                        bw.at("idt_weighted") < color.at("idt_weighted");
  const bool skipped = none.at("idt_x") == 0.0 && none.at("idt_y") == 0.0 && none.at("idt_weighted") == 0.0 &&
                       none.tape_scopes.count("identity") == 0;
  report(7, weakened && skipped,
         "bw identity " + fmt("%.4f", bw.at("idt_weighted")) + " = " + fmt("%.2g", kWeakenedIdentityWeight) +
             " x " + fmt("%.4f", raw) + " vs color " + fmt("%.4f", color.at("idt_weighted")) +
             "; lambda_idt = 0 reports " + fmt("%.1f", none.at("idt_weighted")) + " with " +
             std::to_string(none.tape_scopes.count("identity") ? none.tape_scopes.at("identity") : 0) +
             " identity tape nodes");
}

void overfit_reconstruction() {
  const auto cfg = load_run_config(fs::path(ICONIFY_CONFIGS) / "smoke.cfg");
  const auto xi = make_shape_images(ShapeKind::filled_squares, 4, 32, 31);
  const auto yi = make_shape_images(ShapeKind::outlined_circles, 4, 32, 32);
  std::vector<Tensor<float>> xs, ys;
  for (int i = 0; i < 4; ++i) {
    xs.push_back(to_tensor(xi[i]));
    ys.push_back(to_tensor(yi[i]));
  }
  auto m = make_cyclegan<float>(cfg.net, cfg.adam, 32, cfg.seed, cfg.pool_capacity);
  auto cycle_l1 = [&] {
    double s = 0;
    for (const auto& x : xs) {
      const auto back = reconstruct(m, x, Direction::photo_to_icon).second;
      for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(double(back[i]) - double(x[i]));
    }
    return s / static_cast<double>(xs.size() * xs[0].size());
  };
  const auto t0 = Clock::now();
  double step1 = 0;
  for (std::size_t s = 0; s < 1000; ++s) {
    cyclegan_train_step(m, xs[s % 4], ys[s % 4], cfg.weights);
    if (s == 0) step1 = cycle_l1();
  }
  const double final_l1 = cycle_l1();
  report(8, final_l1 <= 0.5 * step1,
         "L1(x, F(G(x))) over 4 pairs " + fmt("%.4f", step1) + " after step 1 -> " + fmt("%.4f", final_l1) +
             " after 1000 (" + fmt("%.1f%%", 100 * final_l1 / step1) + "), " + fmt("%.1f s", seconds_since(t0)));
}

void determinism(const SmokeRun& a, const fs::path& probe) {
  std::vector<std::string> differing;
  auto same = [&](const std::string& what, const fs::path& p, const fs::path& q) {
    if (!fs::exists(p) || slurp(p) != slurp(q)) differing.push_back(what);
  };
  const auto b = smoke_train("smoke_b");
  same("train loss.log", a.dir / "loss.log", b.dir / "loss.log");
  same("train checkpoint", a.dir / "checkpoints" / "stage0_32.ckpt", b.dir / "checkpoints" / "stage0_32.ckpt");

  const std::string ckpt = (a.dir / "checkpoints" / "stage0_32.ckpt").string();
  for (const std::string run : {"i1", "i2"})
    cli("--output-dir " + (g_work / run).string() + " iconify --reconstruct --checkpoint " + ckpt + probe_args(probe),
        g_work / (run + ".out"));
  for (int i = 0; i < 8; ++i) {
    const std::string stem = "p" + std::to_string(i);
    same("iconify " + stem, g_work / "i1" / (stem + ".iconified.png"), g_work / "i2" / (stem + ".iconified.png"));
    same("cycled " + stem, g_work / "i1" / (stem + ".cycled.png"), g_work / "i2" / (stem + ".cycled.png"));
  }

  const fs::path fixture = fs::path(ICONIFY_FIXTURES) / "coco_mini";
  for (const std::string run : {"p1", "p2"}) {
    cli("--output-dir " + (g_work / run).string() + " prepare --coco " + (fixture / "annotations.json").string() +
            " --coco-images " + (fixture / "images").string() + " --synthetic circles --count 5 --size 32",
        g_work / (run + ".out"));
    cli("--output-dir " + (g_work / run).string() + " prepare --icons " + probe.string() + " --augment 3",
        g_work / (run + "i.out"));
    cli("--output-dir " + (g_work / run).string() + " grid --row " + (g_work / "i1" / "p0.iconified.png").string() +
            "," + (g_work / "i1" / "p1.iconified.png").string(),
        g_work / (run + "g.out"));
  }
  std::size_t prepared = 0;
  for (const auto& sub : {"photos", "circles", "icons"}) {
    for (const auto& e : fs::directory_iterator(g_work / "p1" / sub)) {
      same(std::string("prepare ") + sub, e.path(), g_work / "p2" / sub / e.path().filename());
      ++prepared;
    }
  }
  same("grid", g_work / "p1" / "grid.png", g_work / "p2" / "grid.png");
  cli("verify --fast", g_work / "v1.out");
  cli("verify --fast", g_work / "v2.out");
  same("verify table", g_work / "v1.out", g_work / "v2.out");

  std::string detail = b.code == 0 ? "train, iconify, prepare (" + std::to_string(prepared) +
                                         " files), grid and verify outputs byte-identical across two runs"
                                   : "second train run exited " + std::to_string(b.code);
  if (!differing.empty()) {
    detail = std::to_string(differing.size()) + " outputs differ, first: " + differing.front();
  }
  report(9, b.code == 0 && differing.empty() && prepared > 0, detail);
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "iconify_acceptance";
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  auto guarded = [](int criterion, const auto& body) {
    try {
      body();
    } catch (const std::exception& e) {
      report(criterion, false, std::string("exception: ") + e.what());
    }
  };
  guarded(1, gradient_integrity);
  guarded(2, oracle_equivalence);
  guarded(3, dataset_counts);
  SmokeRun smoke;
  fs::path probe;
  guarded(4, [&] {
    probe = write_probe_inputs();
    smoke = smoke_train("smoke_a");
    smoke_cyclegan(smoke, probe);
  });
  guarded(5, smoke_unit);
  guarded(6, coarse_to_fine_contract);
  guarded(7, identity_presets);
  guarded(8, overfit_reconstruction);
  guarded(9, [&] { determinism(smoke, probe); });

  std::printf("%d of 9 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
