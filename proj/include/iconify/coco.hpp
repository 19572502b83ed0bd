#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "iconify/image.hpp"

namespace iconify {

/// Binary instance mask, row-major, values in {0, 1}.
struct Mask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;

  std::size_t area() const;
};

struct Instance {
  std::string label;
  Mask mask;
};

struct AnnotatedImage {
  std::string source_id;
  Image image;
  std::vector<Instance> instances;

  /// Throws if a mask's size differs from the image or holds values other than 0/1.
  void validate() const;
};

/// Fills polygons (flat x,y lists in pixel coordinates) by the even-odd rule,
/// sampling at pixel centres.
Mask rasterize_polygons(const std::vector<std::vector<double>>& polygons, std::size_t width, std::size_t height);

/// Column-major run lengths starting with a background run.
Mask decode_rle(const std::vector<std::uint32_t>& counts, std::size_t width, std::size_t height);
/// The compact string form of run lengths used by COCO tooling.
std::vector<std::uint32_t> decode_rle_string(const std::string& encoded);

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Streams annotated images from a COCO-style JSON manifest. `images_dir`
/// resolves each image's `file_name`.
void for_each_annotated_image(const std::filesystem::path& manifest, const std::filesystem::path& images_dir,
                              const std::function<void(const AnnotatedImage&)>& visit);

}  // namespace iconify
