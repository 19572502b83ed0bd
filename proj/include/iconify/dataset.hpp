#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iconify/coco.hpp"
#include "iconify/image.hpp"
#include "iconify/rng.hpp"
#include "iconify/tensor.hpp"

namespace iconify {

/// Square white canvas with a white margin ring around the content box.
struct CanvasSpec {
  std::size_t size = 256;
  std::size_t margin = 12;

  std::size_t content() const { return size - 2 * margin; }
};

inline constexpr std::size_t kDefaultMinArea = 1024;

struct ObjectCutout {
  Image image;
  std::string label;
  std::size_t area = 0;
  std::string source_id;
};

struct ExtractResult {
  std::vector<ObjectCutout> cutouts;
  std::size_t skipped_small = 0;
  std::size_t skipped_empty = 0;
};

/// One cutout per instance with at least `min_area` mask pixels: background
/// set to white, tight-cropped, scaled to fit the content box and centred.
ExtractResult extract_objects(const AnnotatedImage& src, std::size_t min_area = kDefaultMinArea,
                              const CanvasSpec& canvas = {});

/// Scales `image` to fit the canvas content box (aspect preserved) and centres it on white.
Image fit_to_canvas(const Image& image, const CanvasSpec& canvas = {});

/// Resamples an RGB image: area average when shrinking, bilinear when growing.
Image resample(const Image& image, std::size_t width, std::size_t height);

struct AugmentParams {
  double max_translate = 0.10;  // fraction of the canvas
  double max_rotate_deg = 15.0;
  double min_scale = 0.8;
  double max_scale = 1.2;
  std::size_t copies = 10;  // k: outputs per input, the first being the original

  void validate() const;
};

/// k outputs per icon, ordered icon-major. Copy 0 is the untouched original;
/// the rest are random translate/rotate/scale warps with white fill.
std::vector<Image> augment_icons(std::span<const Image> icons, const AugmentParams& params, std::uint64_t seed);

/// Square logos scaled into the canvas content box.
std::vector<Image> prepare_logos(std::span<const Image> logos, const CanvasSpec& canvas = {});

enum class DomainRole { photo_x, target_y };

const char* to_string(DomainRole r);

struct DomainDataset {
  DomainRole role = DomainRole::photo_x;
  std::vector<Tensor<float>> items;  // each 1 x 3 x R x R in [-1, 1]
  std::size_t resolution = 0;

  std::size_t size() const { return items.size(); }
};

DomainDataset make_dataset(DomainRole role, std::span<const Image> images);

/// Independent uniform draws from each domain.
std::pair<Tensor<float>, Tensor<float>> sample_unpaired_batch(const DomainDataset& x_set, const DomainDataset& y_set,
                                                              std::size_t batch, Rng& rng);

inline constexpr std::size_t kStageResolutions[] = {32, 64, 128, 256};

DomainDataset stage_resize(const DomainDataset& set, std::size_t resolution);

enum class ShapeKind { filled_squares, outlined_circles };

/// Bundled synthetic domains: randomly coloured filled squares (photo side)
/// and black outlined circles (icon side) on white.
std::vector<Image> make_shape_images(ShapeKind kind, std::size_t count, std::size_t size, std::uint64_t seed);

/// Explicit include/exclude list for a prepared domain. Lines are
/// `allow <file>` or `deny <file>`; `#` starts a comment. With any allow
/// entry present, only allowed files pass.
struct SubsetFilter {
  std::set<std::string> allow;
  std::set<std::string> deny;

  static SubsetFilter load(const std::filesystem::path& path);
  bool accepts(const std::string& file) const;
};

struct ManifestEntry {
  std::string file;
  std::string label;
  std::string source_id;
};

/// Writes numbered PNGs plus manifest.tsv (file, label, source id).
void write_domain_dir(const std::filesystem::path& dir, std::span<const Image> images,
                      std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> read_domain_manifest(const std::filesystem::path& dir);

/// Loads a prepared domain directory (or a plain PNG directory), honouring the filter.
std::vector<Image> load_domain_images(const std::filesystem::path& dir, const std::optional<SubsetFilter>& filter);

}  // namespace iconify
