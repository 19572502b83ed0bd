#include "iconify/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "iconify/ops.hpp"

namespace iconify {

namespace {

struct Tap {
  std::size_t src;
  double weight;
};

// Per-output-sample taps along one axis.
std::vector<std::vector<Tap>> axis_taps(std::size_t in, std::size_t out) {
  std::vector<std::vector<Tap>> taps(out);
  if (in == out) {
    for (std::size_t i = 0; i < out; ++i) taps[i].push_back({i, 1.0});
  } else if (out < in) {
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double lo = static_cast<double>(i) * ratio, hi = static_cast<double>(i + 1) * ratio;
      for (auto k = static_cast<std::size_t>(lo); k < in && static_cast<double>(k) < hi; ++k) {
        const double overlap = std::min(hi, k + 1.0) - std::max(lo, static_cast<double>(k));
        if (overlap > 1e-12) taps[i].push_back({k, overlap / ratio});
      }
    }
  } else {
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double s = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
      const auto k = static_cast<std::size_t>(std::floor(s));
      const double f = s - static_cast<double>(k);
      taps[i].push_back({k, 1.0 - f});
      if (f > 0 && k + 1 < in) taps[i].push_back({k + 1, f});
    }
  }
  return taps;
}

std::uint8_t to_level(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

void paste(Image& dst, const Image& src, std::size_t x0, std::size_t y0) {
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x) dst.set(x0 + x, y0 + y, src.rgb(x, y));
}

Image fit_box(const Image& content, const CanvasSpec& canvas) {
  if (canvas.size <= 2 * canvas.margin) throw std::invalid_argument("canvas: margin leaves no content area");
  const std::size_t box = canvas.content();
  const double s = static_cast<double>(box) / static_cast<double>(std::max(content.width, content.height));
  const auto nw = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(content.width * s)), 1, box);
  const auto nh = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(content.height * s)), 1, box);
  Image out(canvas.size, canvas.size);
  paste(out, resample(content, nw, nh), canvas.margin + (box - nw) / 2, canvas.margin + (box - nh) / 2);
  return out;
}

// Bilinear sample at continuous pixel coordinates; outside samples read white.
std::array<double, 3> sample_bilinear(const Image& img, double fx, double fy) {
  const double x = fx - 0.5, y = fy - 0.5;
  const double x0 = std::floor(x), y0 = std::floor(y);
  const double ax = x - x0, ay = y - y0;
  std::array<double, 3> acc{0, 0, 0};
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const double w = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay);
      if (w == 0) continue;
      const double px = x0 + dx, py = y0 + dy;
      const bool inside = px >= 0 && py >= 0 && px < static_cast<double>(img.width) && py < static_cast<double>(img.height);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = inside ? img.at(static_cast<std::size_t>(px), static_cast<std::size_t>(py), c) : 255.0;
        acc[c] += w * v;
      }
    }
  return acc;
}

}  // namespace

Image resample(const Image& image, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw std::invalid_argument("resample: target must be at least 1x1");
  if (width == image.width && height == image.height) return image;
  const auto tx = axis_taps(image.width, width);
  const auto ty = axis_taps(image.height, height);
  // Horizontal pass into doubles, then vertical.
  std::vector<double> tmp(image.height * width * 3, 0.0);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (const Tap& t : tx[x])
        for (std::size_t c = 0; c < 3; ++c) tmp[(y * width + x) * 3 + c] += t.weight * image.at(t.src, y, c);
  Image out(width, height);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = 0;
        for (const Tap& t : ty[y]) v += t.weight * tmp[(t.src * width + x) * 3 + c];
        out.at(x, y, c) = to_level(v);
      }
  return out;
}

ExtractResult extract_objects(const AnnotatedImage& src, std::size_t min_area, const CanvasSpec& canvas) {
  src.validate();
  ExtractResult result;
  for (const auto& inst : src.instances) {
    const std::size_t area = inst.mask.area();
    if (area == 0) {
      ++result.skipped_empty;
      continue;
    }
    if (area < min_area) {
      ++result.skipped_small;
      continue;
    }
    std::size_t x0 = src.image.width, y0 = src.image.height, x1 = 0, y1 = 0;
    for (std::size_t y = 0; y < src.image.height; ++y)
      for (std::size_t x = 0; x < src.image.width; ++x)
        if (inst.mask.bits[y * src.image.width + x]) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    Image crop(x1 - x0 + 1, y1 - y0 + 1);
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x)
        if (inst.mask.bits[y * src.image.width + x]) crop.set(x - x0, y - y0, src.image.rgb(x, y));
    result.cutouts.push_back({fit_box(crop, canvas), inst.label, area, src.source_id});
  }
  return result;
}

Image fit_to_canvas(const Image& image, const CanvasSpec& canvas) { return fit_box(image, canvas); }

void AugmentParams::validate() const {
  if (copies < 1) throw std::invalid_argument("augment: copies must be >= 1");
  if (!(min_scale > 0) || !(max_scale >= min_scale)) throw std::invalid_argument("augment: scale range must be positive");
  if (max_translate < 0 || max_rotate_deg < 0) throw std::invalid_argument("augment: ranges must be non-negative");
}

std::vector<Image> augment_icons(std::span<const Image> icons, const AugmentParams& params, std::uint64_t seed) {
  params.validate();
  std::vector<Image> out;
  out.reserve(icons.size() * params.copies);
  for (std::size_t i = 0; i < icons.size(); ++i) {
    const Image& icon = icons[i];
    out.push_back(icon);
    const double cx = icon.width / 2.0, cy = icon.height / 2.0;
    for (std::size_t j = 1; j < params.copies; ++j) {
      Rng rng(derive_seed(seed, i, j));
      const double tx = rng.uniform(-params.max_translate, params.max_translate) * static_cast<double>(icon.width);
      const double ty = rng.uniform(-params.max_translate, params.max_translate) * static_cast<double>(icon.height);
      const double theta = rng.uniform(-params.max_rotate_deg, params.max_rotate_deg) * std::numbers::pi / 180.0;
      const double s = rng.uniform(params.min_scale, params.max_scale);
      const double cs = std::cos(theta), sn = std::sin(theta);
      Image warped(icon.width, icon.height);
      for (std::size_t y = 0; y < icon.height; ++y)
        for (std::size_t x = 0; x < icon.width; ++x) {
          // Inverse map: output -> source.
          const double dx = x + 0.5 - cx - tx, dy = y + 0.5 - cy - ty;
          const double sx = (cs * dx + sn * dy) / s + cx;
          const double sy = (-sn * dx + cs * dy) / s + cy;
          const auto v = sample_bilinear(icon, sx, sy);
          for (std::size_t c = 0; c < 3; ++c) warped.at(x, y, c) = to_level(v[c]);
        }
      out.push_back(std::move(warped));
    }
  }
  return out;
}

std::vector<Image> prepare_logos(std::span<const Image> logos, const CanvasSpec& canvas) {
  std::vector<Image> out;
  out.reserve(logos.size());
  for (const auto& logo : logos) {
    if (logo.width != logo.height) {
      throw std::invalid_argument("prepare_logos: logo is " + std::to_string(logo.width) + "x" +
                                  std::to_string(logo.height) + ", expected a square image");
    }
    out.push_back(fit_box(logo, canvas));
  }
  return out;
}

const char* to_string(DomainRole r) { return r == DomainRole::photo_x ? "x" : "y"; }

DomainDataset make_dataset(DomainRole role, std::span<const Image> images) {
  DomainDataset set;
  set.role = role;
  for (const auto& img : images) {
    if (img.width != img.height) throw std::invalid_argument("dataset: images must be square");
    if (set.resolution == 0) set.resolution = img.width;
    if (img.width != set.resolution) throw std::invalid_argument("dataset: images must share one resolution");
    set.items.push_back(to_tensor(img));
  }
  return set;
}

std::pair<Tensor<float>, Tensor<float>> sample_unpaired_batch(const DomainDataset& x_set, const DomainDataset& y_set,
                                                              std::size_t batch, Rng& rng) {
  if (x_set.items.empty() || y_set.items.empty()) throw std::invalid_argument("sample_unpaired_batch: empty domain");
  if (batch == 0) throw std::invalid_argument("sample_unpaired_batch: batch must be positive");
  std::vector<Tensor<float>> xs, ys;
  for (std::size_t i = 0; i < batch; ++i) xs.push_back(x_set.items[rng.index(x_set.items.size())]);
  for (std::size_t i = 0; i < batch; ++i) ys.push_back(y_set.items[rng.index(y_set.items.size())]);
  return {stack_batch<float>(xs), stack_batch<float>(ys)};
}

DomainDataset stage_resize(const DomainDataset& set, std::size_t resolution) {
  if (std::find(std::begin(kStageResolutions), std::end(kStageResolutions), resolution) == std::end(kStageResolutions)) {
    throw std::invalid_argument("stage_resize: unsupported resolution " + std::to_string(resolution) +
                                " (expected 32, 64, 128 or 256)");
  }
  DomainDataset out;
  out.role = set.role;
  out.resolution = resolution;
  out.items.reserve(set.items.size());
  for (const auto& item : set.items) out.items.push_back(resize_area(item, resolution, resolution));
  return out;
}

std::vector<Image> make_shape_images(ShapeKind kind, std::size_t count, std::size_t size, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(count);
  const double S = static_cast<double>(size);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(kind), i));
    Image img(size, size);
    if (kind == ShapeKind::filled_squares) {
      const auto side = static_cast<std::size_t>(rng.uniform(0.3, 0.7) * S);
      const std::size_t x0 = rng.index(size - side + 1), y0 = rng.index(size - side + 1);
      const Rgb color{static_cast<std::uint8_t>(rng.index(201)), static_cast<std::uint8_t>(rng.index(201)),
                      static_cast<std::uint8_t>(rng.index(201))};
      for (std::size_t y = y0; y < y0 + side; ++y)
        for (std::size_t x = x0; x < x0 + side; ++x) img.set(x, y, color);
    } else {
      const double r = rng.uniform(0.2, 0.4) * S;
      const double thickness = std::max(1.0, S / 16.0);
      const double cx = rng.uniform(r + thickness, S - r - thickness);
      const double cy = rng.uniform(r + thickness, S - r - thickness);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
          if (std::abs(d - r) <= thickness / 2.0) img.set(x, y, Rgb{0, 0, 0});
        }
    }
    out.push_back(std::move(img));
  }
  return out;
}

SubsetFilter SubsetFilter::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("subset filter: cannot open " + path.string());
  SubsetFilter f;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream is(line);
    std::string verb, file;
    if (!(is >> verb)) continue;
    if (!(is >> file)) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": missing file name");
    if (verb == "allow") {
      f.allow.insert(file);
    } else if (verb == "deny") {
      f.deny.insert(file);
    } else {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 'allow' or 'deny', got '" +
                               verb + "'");
    }
  }
  return f;
}

bool SubsetFilter::accepts(const std::string& file) const {
  if (deny.count(file)) return false;
  return allow.empty() || allow.count(file) != 0;
}

void write_domain_dir(const std::filesystem::path& dir, std::span<const Image> images,
                      std::span<const ManifestEntry> entries) {
  if (images.size() != entries.size()) throw std::invalid_argument("write_domain_dir: one manifest entry per image");
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.tsv");
  manifest << "file\tlabel\tsource_id\n";
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_png(dir / entries[i].file, images[i]);
    manifest << entries[i].file << '\t' << entries[i].label << '\t' << entries[i].source_id << '\n';
  }
  if (!manifest) throw std::runtime_error("write_domain_dir: failed writing " + (dir / "manifest.tsv").string());
}

std::vector<ManifestEntry> read_domain_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.tsv");
  if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.tsv").string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    ManifestEntry e;
    std::getline(is, e.file, '\t');
    std::getline(is, e.label, '\t');
    std::getline(is, e.source_id, '\t');
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Image> load_domain_images(const std::filesystem::path& dir, const std::optional<SubsetFilter>& filter) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("domain directory not found: " + dir.string());
  std::vector<std::string> files;
  if (std::filesystem::exists(dir / "manifest.tsv")) {
    for (const auto& e : read_domain_manifest(dir)) files.push_back(e.file);
  } else {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() == ".png") files.push_back(entry.path().filename().string());
    }
    std::sort(files.begin(), files.end());
  }
  std::vector<Image> out;
  for (const auto& f : files) {
    if (filter && !filter->accepts(f)) continue;
    out.push_back(read_png(dir / f));
  }
  return out;
}

}  // namespace iconify
