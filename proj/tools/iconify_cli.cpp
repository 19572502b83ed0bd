#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "iconify/checkpoint.hpp"
#include "iconify/coco.hpp"
#include "iconify/config.hpp"
#include "iconify/dataset.hpp"
#include "iconify/grid.hpp"
#include "iconify/image.hpp"
#include "iconify/training.hpp"
#include "iconify/verify.hpp"

namespace fs = std::filesystem;
using namespace iconify;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

/// Input problem the user must fix; reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string output_dir;
};

fs::path output_root(const Globals& g, const std::string& fallback) {
  if (!g.output_dir.empty()) return g.output_dir;
  return fallback;
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  std::string coco_manifest;
  std::string coco_images;
  std::size_t min_area = kDefaultMinArea;
  std::string icons;
  std::size_t augment = 1;
  std::string logos;
  std::string synthetic;
  std::size_t count = 64;
  std::size_t size = 256;
  std::size_t canvas = 256;
};

std::vector<std::pair<std::string, Image>> read_png_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::pair<std::string, Image>> out;
  for (const auto& f : files) out.emplace_back(f.filename().string(), read_png(f));
  return out;
}

std::vector<ManifestEntry> numbered(std::size_t n, const std::vector<std::pair<std::string, std::string>>& labels) {
  std::vector<ManifestEntry> entries;
  char name[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(name, sizeof name, "%06zu.png", i);
    entries.push_back({name, labels[i].first, labels[i].second});
  }
  return entries;
}

int cmd_prepare(const Globals& g, const PrepareArgs& a) {
  const bool any = !a.coco_manifest.empty() || !a.icons.empty() || !a.logos.empty() || !a.synthetic.empty();
  if (!any) throw UsageError("prepare: nothing to do (give --coco, --icons, --logos or --synthetic)");
  if (!a.coco_manifest.empty()) {
    if (!fs::is_regular_file(a.coco_manifest)) throw UsageError("manifest not found: " + a.coco_manifest);
    const fs::path images = a.coco_images.empty() ? fs::path(a.coco_manifest).parent_path() : fs::path(a.coco_images);
    if (!fs::is_directory(images)) throw UsageError("image directory not found: " + images.string());
  }
  if (!a.icons.empty() && !fs::is_directory(a.icons)) throw UsageError("icon directory not found: " + a.icons);
  if (!a.logos.empty() && !fs::is_directory(a.logos)) throw UsageError("logo directory not found: " + a.logos);
  if (!a.synthetic.empty() && a.synthetic != "squares" && a.synthetic != "circles") {
    throw UsageError("--synthetic must be squares or circles");
  }
  if (a.augment == 0) throw UsageError("--augment must be at least 1");
  if (a.canvas < 8) throw UsageError("--canvas-size must be at least 8");

  const fs::path root = output_root(g, "prepared");
  const CanvasSpec canvas{a.canvas, a.canvas * 12 / 256};
  const std::uint64_t seed = g.seed.value_or(0);
  std::vector<fs::path> created;
  auto fresh_dir = [&](const std::string& name) {
    const fs::path dir = root / name;
    if (fs::exists(dir)) throw UsageError("output directory already exists: " + dir.string());
    created.push_back(dir);
    return dir;
  };

  try {
    if (!a.coco_manifest.empty()) {
      const fs::path images = a.coco_images.empty() ? fs::path(a.coco_manifest).parent_path() : fs::path(a.coco_images);
      const fs::path dir = fresh_dir("photos");
      std::vector<Image> out;
      std::vector<std::pair<std::string, std::string>> labels;
      std::size_t sources = 0, small = 0, empty = 0;
      for_each_annotated_image(a.coco_manifest, images, [&](const AnnotatedImage& ai) {
        ++sources;
        auto r = extract_objects(ai, a.min_area, canvas);
        small += r.skipped_small;
        empty += r.skipped_empty;
        for (auto& c : r.cutouts) {
          labels.emplace_back(c.label, c.source_id);
          out.push_back(std::move(c.image));
        }
      });
      write_domain_dir(dir, out, numbered(out.size(), labels));
      std::printf("photos: %zu cutouts from %zu images (skipped %zu below min area, %zu empty) -> %s\n", out.size(),
                  sources, small, empty, dir.string().c_str());
    }
    if (!a.icons.empty()) {
      const auto inputs = read_png_dir(a.icons);
      std::vector<Image> fitted;
      for (const auto& [name, img] : inputs) fitted.push_back(fit_to_canvas(img, canvas));
      AugmentParams params;
      params.copies = a.augment;
      const auto out = augment_icons(fitted, params, seed);
      std::vector<std::pair<std::string, std::string>> labels;
      for (const auto& [name, img] : inputs) {
        for (std::size_t k = 0; k < a.augment; ++k) labels.emplace_back(fs::path(name).stem().string(), name);
      }
      const fs::path dir = fresh_dir("icons");
      write_domain_dir(dir, out, numbered(out.size(), labels));
      std::printf("icons: %zu inputs x %zu -> %zu outputs -> %s\n", inputs.size(), a.augment, out.size(),
                  dir.string().c_str());
    }
    if (!a.logos.empty()) {
      const auto inputs = read_png_dir(a.logos);
      std::vector<Image> imgs;
      std::vector<std::pair<std::string, std::string>> labels;
      for (const auto& [name, img] : inputs) {
        imgs.push_back(img);
        labels.emplace_back(fs::path(name).stem().string(), name);
      }
      const auto out = prepare_logos(imgs, canvas);
      const fs::path dir = fresh_dir("logos");
      write_domain_dir(dir, out, numbered(out.size(), labels));
      std::printf("logos: %zu inputs -> %zu outputs -> %s\n", inputs.size(), out.size(), dir.string().c_str());
    }
    if (!a.synthetic.empty()) {
      const ShapeKind kind = a.synthetic == "squares" ? ShapeKind::filled_squares : ShapeKind::outlined_circles;
      const auto out = make_shape_images(kind, a.count, a.size, seed);
      std::vector<std::pair<std::string, std::string>> labels(out.size(), {a.synthetic, "synthetic"});
      const fs::path dir = fresh_dir(a.synthetic);
      write_domain_dir(dir, out, numbered(out.size(), labels));
      std::printf("%s: %zu outputs -> %s\n", a.synthetic.c_str(), out.size(), dir.string().c_str());
    }
  } catch (...) {
    for (const auto& d : created) fs::remove_all(d);
    if (fs::exists(root) && fs::is_empty(root)) fs::remove(root);
    throw;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// train

std::vector<Image> domain_images(const std::string& source, const std::string& filter, const RunConfig& cfg,
                                 std::uint64_t stream) {
  if (source.empty()) throw UsageError("config: data source is empty");
  if (source == "synthetic:squares" || source == "synthetic:circles") {
    const ShapeKind kind = source == "synthetic:squares" ? ShapeKind::filled_squares : ShapeKind::outlined_circles;
    return make_shape_images(kind, cfg.synthetic_count, cfg.synthetic_size, derive_seed(cfg.seed, stream));
  }
  if (source.starts_with("synthetic:")) throw UsageError("config: unknown synthetic source '" + source + "'");
  if (!fs::is_directory(source)) throw UsageError("data directory not found: " + source);
  std::optional<SubsetFilter> f;
  if (!filter.empty()) f = SubsetFilter::load(filter);
  auto imgs = load_domain_images(source, f);
  if (imgs.empty()) throw UsageError("no images in " + source);
  return imgs;
}

/// Keeps only log lines for steps before `step`.
void truncate_log(const fs::path& log, std::uint64_t step) {
  if (!fs::exists(log)) return;
  std::ifstream in(log);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(' '))) < step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(log, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

int cmd_train(const Globals& g, const std::string& resume, std::optional<std::uint64_t> max_steps) {
  if (g.config.empty()) throw UsageError("train: --config is required");
  RunConfig cfg = load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  const StageSchedule schedule = cfg.schedule();
  const fs::path root = output_root(g, cfg.output_dir);
  const fs::path ckpt_dir = root / "checkpoints";
  const fs::path log_path = root / "loss.log";

  const auto xs = domain_images(cfg.data_x, cfg.filter_x, cfg, 100);
  const auto ys = domain_images(cfg.data_y, cfg.filter_y, cfg, 101);
  const DomainDataset x_set = make_dataset(DomainRole::photo_x, xs);
  const DomainDataset y_set = make_dataset(DomainRole::target_y, ys);

  std::optional<LoadedCheckpoint> loaded;
  if (!resume.empty()) {
    loaded = load_checkpoint(resume);
    const bool is_cyclegan = std::holds_alternative<CycleGanModel<float>>(loaded->model);
    if (is_cyclegan != (cfg.model == ModelKind::cyclegan)) {
      throw UsageError("checkpoint model kind does not match the config");
    }
  }
  fs::create_directories(root);
  {
    std::ofstream snapshot(root / "config.cfg");
    snapshot << serialize_run_config(cfg);
  }

  AnyModel model = loaded ? std::move(loaded->model)
                   : cfg.model == ModelKind::cyclegan
                       ? AnyModel(make_cyclegan<float>(cfg.net, cfg.adam, schedule.stages.front().resolution, cfg.seed,
                                                       cfg.pool_capacity))
                       : AnyModel(make_unit<float>(cfg.net, cfg.adam, schedule.stages.front().resolution, cfg.seed));
  RunState state;
  if (loaded) {
    state = loaded->state;
    truncate_log(log_path, state.global_step);
  } else {
    state.data_rng = Rng(derive_seed(cfg.seed, 200));
    if (fs::exists(log_path)) fs::remove(log_path);
  }

  std::ofstream log(log_path, std::ios::app);
  RunOptions opts;
  opts.batch_size = cfg.batch_size;
  opts.base_lr = cfg.adam.lr;
  opts.checkpoint_dir = ckpt_dir;
  opts.max_steps = max_steps;
  opts.on_step = [&](const StepRecord& r) { log << format_log_line(r) << '\n' << std::flush; };
  opts.on_stage_begin = [&](std::size_t stage, const AnyModel&) {
    std::fprintf(stderr, "stage %zu: %zux%zu, %zu iterations\n", stage, schedule.stages[stage].resolution,
                 schedule.stages[stage].resolution, schedule.stages[stage].iterations);
  };
  const RunResult result = run_coarse_to_fine(model, state, schedule, x_set, y_set, cfg.weights, opts);
  for (const auto& p : result.checkpoints) std::printf("checkpoint %s\n", p.string().c_str());
  if (!result.completed) {
    const fs::path p = ckpt_dir / "interrupted.ckpt";
    save_checkpoint(p, model, state);
    std::printf("stopped after %llu steps; checkpoint %s\n", static_cast<unsigned long long>(state.global_step),
                p.string().c_str());
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// iconify

struct IconifyArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string direction = "photo2icon";
  bool reconstruct = false;
};

int cmd_iconify(const Globals& g, const IconifyArgs& a) {
  if (!fs::is_regular_file(a.checkpoint)) throw UsageError("checkpoint not found: " + a.checkpoint);
  const Direction dir = parse_direction(a.direction);
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const fs::path root = output_root(g, "iconified");
  fs::create_directories(root);
  const char* suffix = dir == Direction::photo_to_icon ? ".iconified.png" : ".photo.png";

  std::atomic<std::size_t> next{0}, ok{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t i = next++; i < a.inputs.size(); i = next++) {
      const fs::path in = a.inputs[i];
      try {
        const Image img = read_png(in);
        if (img.width % 4 != 0 || img.height % 4 != 0) throw std::invalid_argument("size must be a multiple of 4");
        if (ck.state.resolution != 0 && (img.width != ck.state.resolution || img.height != ck.state.resolution)) {
          std::lock_guard lock(io);
          std::fprintf(stderr, "warning: %s is %zux%zu; the model was last trained at %zu\n", in.string().c_str(),
                       img.width, img.height, ck.state.resolution);
        }
        const Tensor<float> x = to_tensor(img);
        const std::string stem = in.stem().string();
        std::visit(
            [&](const auto& m) {
              if (a.reconstruct) {
                auto [t, back] = reconstruct(m, x, dir);
                write_png(root / (stem + suffix), to_image(t));
                write_png(root / (stem + ".cycled.png"), to_image(back));
              } else {
                write_png(root / (stem + suffix), to_image(convert(m, x, dir)));
              }
            },
            ck.model);
        ++ok;
      } catch (const std::exception& e) {
        std::lock_guard lock(io);
        std::fprintf(stderr, "warning: skipping %s: %s\n", in.string().c_str(), e.what());
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(g.threads, a.inputs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  std::printf("converted %zu of %zu images -> %s\n", ok.load(), a.inputs.size(), root.string().c_str());
  return ok == 0 ? kFailed : kOk;
}

// ---------------------------------------------------------------------------
// grid

int cmd_grid(const Globals& g, const std::vector<std::string>& rows, const std::string& name) {
  if (rows.empty()) throw UsageError("grid: give at least one --row");
  std::vector<std::vector<Image>> images;
  for (const auto& row : rows) {
    std::vector<Image> r;
    std::stringstream ss(row);
    std::string file;
    while (std::getline(ss, file, ',')) {
      if (!file.empty()) r.push_back(read_png(file));
    }
    images.push_back(std::move(r));
  }
  Image sheet;
  try {
    sheet = render_contact_sheet(images);
  } catch (const GridError& e) {
    throw UsageError(e.what());
  }
  const fs::path root = output_root(g, ".");
  fs::create_directories(root);
  write_png(root / name, sheet);
  std::printf("grid %zux%zu -> %s\n", sheet.width, sheet.height, (root / name).string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------
// verify

int cmd_verify(const Globals& g, bool fast, const std::string& fault) {
  VerifyOptions opts;
  opts.fast = fast;
  opts.seed = g.seed.value_or(0);
  if (!fault.empty()) opts.inject_fault = fault;
  const auto rows = run_verification(opts);
  std::fputs(format_check_table(rows).c_str(), stdout);
  std::vector<std::string> failed;
  for (const auto& r : rows) {
    if (!r.passed) failed.push_back(r.name + " [" + r.op + "]");
  }
  if (failed.empty()) {
    std::printf("all %zu checks passed\n", rows.size());
    return kOk;
  }
  std::printf("%zu failed:\n", failed.size());
  for (const auto& f : failed) std::printf("  %s\n", f.c_str());
  return kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unpaired photo-to-icon translation: data preparation, training, conversion and checks"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Run configuration file");
  app.add_option("--seed", g.seed, "Seed overriding the configuration");
  app.add_option("--threads", g.threads, "Worker threads for per-image work")->check(CLI::PositiveNumber);
  app.add_option("--output-dir", g.output_dir, "Directory receiving all outputs");

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "Build domain directories from raw sources");
  prepare->add_option("--coco", pa.coco_manifest, "COCO-style annotation manifest (photo domain)");
  prepare->add_option("--coco-images", pa.coco_images, "Directory holding the manifest's images");
  prepare->add_option("--min-area", pa.min_area, "Minimum instance mask area in pixels");
  prepare->add_option("--icons", pa.icons, "Directory of icon PNGs");
  prepare->add_option("--augment", pa.augment, "Outputs per icon, the first being the original");
  prepare->add_option("--logos", pa.logos, "Directory of square logo PNGs");
  prepare->add_option("--synthetic", pa.synthetic, "Generate a synthetic domain: squares or circles");
  prepare->add_option("--count", pa.count, "Synthetic image count");
  prepare->add_option("--size", pa.size, "Synthetic image size");
  prepare->add_option("--canvas-size", pa.canvas, "Output canvas size");

  std::string resume;
  std::optional<std::uint64_t> max_steps;
  auto* train = app.add_subcommand("train", "Train a model per the configuration");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--max-steps", max_steps, "Stop after this many steps and write interrupted.ckpt");

  IconifyArgs ia;
  auto* iconify = app.add_subcommand("iconify", "Convert images with a trained checkpoint");
  iconify->add_option("--checkpoint", ia.checkpoint, "Checkpoint file")->required();
  iconify->add_option("inputs", ia.inputs, "Input PNGs")->required();
  iconify->add_option("--direction", ia.direction, "photo2icon or icon2photo")
      ->check(CLI::IsMember({"photo2icon", "icon2photo"}));
  iconify->add_flag("--reconstruct", ia.reconstruct, "Also write the image translated back");

  std::vector<std::string> rows;
  std::string grid_name = "grid.png";
  auto* grid = app.add_subcommand("grid", "Tile images into a contact sheet");
  grid->add_option("--row", rows, "Comma-separated PNGs for one row (repeatable)");
  grid->add_option("--name", grid_name, "Output file name");

  bool fast = false;
  std::string fault;
  auto* verify = app.add_subcommand("verify", "Gradient checks and convolution oracles");
  verify->add_flag("--fast", fast, "32x32 subset");
  verify->add_option("--inject-fault", fault)->group("")->check(CLI::IsMember(fault_targets()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*prepare) return cmd_prepare(g, pa);
    if (*train) return cmd_train(g, resume, max_steps);
    if (*iconify) return cmd_iconify(g, ia);
    if (*grid) return cmd_grid(g, rows, grid_name);
    if (*verify) return cmd_verify(g, fast, fault);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: invalid configuration:\n");
    for (const auto& p : e.problems()) std::fprintf(stderr, "  %s\n", p.c_str());
    return kUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailed;
  }
  return kUsage;
}
