#include "iconify/coco.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"

namespace iconify {

std::size_t Mask::area() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

void AnnotatedImage::validate() const {
  for (const auto& inst : instances) {
    if (inst.mask.width != image.width || inst.mask.height != image.height ||
        inst.mask.bits.size() != image.width * image.height) {
      throw ManifestError("annotated image " + source_id + ": mask for '" + inst.label +
                          "' does not match the image size");
    }
    if (std::any_of(inst.mask.bits.begin(), inst.mask.bits.end(), [](std::uint8_t b) { return b > 1; })) {
      throw ManifestError("annotated image " + source_id + ": mask for '" + inst.label + "' is not binary");
    }
  }
}

Mask rasterize_polygons(const std::vector<std::vector<double>>& polygons, std::size_t width, std::size_t height) {
  Mask m{width, height, std::vector<std::uint8_t>(width * height, 0)};
  for (std::size_t y = 0; y < height; ++y) {
    const double cy = static_cast<double>(y) + 0.5;
    std::vector<double> xs;
    for (const auto& poly : polygons) {
      const std::size_t n = poly.size() / 2;
      if (n < 3) continue;
      for (std::size_t i = 0; i < n; ++i) {
        const double x0 = poly[2 * i], y0 = poly[2 * i + 1];
        const double x1 = poly[2 * ((i + 1) % n)], y1 = poly[2 * ((i + 1) % n) + 1];
        if ((y0 <= cy && y1 > cy) || (y1 <= cy && y0 > cy)) xs.push_back(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
      }
    }
    std::sort(xs.begin(), xs.end());
    // Even-odd over the union of all rings on this row.
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const double lo = std::max(0.0, std::ceil(xs[k] - 0.5));
      const double hi = std::min(static_cast<double>(width), std::ceil(xs[k + 1] - 0.5));
      for (auto x = static_cast<std::size_t>(lo); static_cast<double>(x) < hi; ++x) m.bits[y * width + x] ^= 1;
    }
  }
  return m;
}

Mask decode_rle(const std::vector<std::uint32_t>& counts, std::size_t width, std::size_t height) {
  Mask m{width, height, std::vector<std::uint8_t>(width * height, 0)};
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : counts) {
    if (pos + run > width * height) throw ManifestError("rle: runs exceed the mask size");
    for (std::uint32_t k = 0; k < run; ++k, ++pos) {
      // Column-major position -> row-major storage.
      const std::size_t x = pos / height, y = pos % height;
      m.bits[y * width + x] = value;
    }
    value ^= 1;
  }
  if (pos != width * height) throw ManifestError("rle: runs do not cover the mask");
  return m;
}

std::vector<std::uint32_t> decode_rle_string(const std::string& s) {
  std::vector<std::uint32_t> counts;
  std::size_t p = 0;
  while (p < s.size()) {
    std::int64_t x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw ManifestError("rle: truncated compressed counts");
      const std::int64_t c = static_cast<std::int64_t>(s[p]) - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1LL << (5 * k);
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    if (x < 0) throw ManifestError("rle: negative run length");
    counts.push_back(static_cast<std::uint32_t>(x));
  }
  return counts;
}

namespace {

Mask mask_from_segmentation(const nlohmann::json& seg, std::size_t width, std::size_t height) {
  if (seg.is_array()) {
    std::vector<std::vector<double>> polys;
    for (const auto& ring : seg) polys.push_back(ring.get<std::vector<double>>());
    return rasterize_polygons(polys, width, height);
  }
  if (seg.is_object() && seg.contains("counts")) {
    const auto& size = seg.at("size");
    const auto h = size.at(0).get<std::size_t>(), w = size.at(1).get<std::size_t>();
    if (h != height || w != width) throw ManifestError("rle: size does not match the image");
    const auto& counts = seg.at("counts");
    if (counts.is_string()) return decode_rle(decode_rle_string(counts.get<std::string>()), width, height);
    return decode_rle(counts.get<std::vector<std::uint32_t>>(), width, height);
  }
  throw ManifestError("segmentation must be a polygon list or an RLE object");
}

}  // namespace

void for_each_annotated_image(const std::filesystem::path& manifest, const std::filesystem::path& images_dir,
                              const std::function<void(const AnnotatedImage&)>& visit) {
  std::ifstream in(manifest);
  if (!in) throw ManifestError("cannot open manifest " + manifest.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("manifest " + manifest.string() + ": " + e.what());
  }
  try {
    std::map<std::int64_t, std::string> categories;
    for (const auto& c : doc.at("categories")) categories[c.at("id").get<std::int64_t>()] = c.at("name").get<std::string>();

    std::map<std::int64_t, std::vector<const nlohmann::json*>> by_image;
    for (const auto& a : doc.at("annotations")) by_image[a.at("image_id").get<std::int64_t>()].push_back(&a);

    for (const auto& entry : doc.at("images")) {
      const auto id = entry.at("id").get<std::int64_t>();
      AnnotatedImage ai;
      ai.source_id = std::to_string(id);
      ai.image = read_png(images_dir / entry.at("file_name").get<std::string>());
      if (entry.contains("width") && entry.contains("height") &&
          (entry.at("width").get<std::size_t>() != ai.image.width ||
           entry.at("height").get<std::size_t>() != ai.image.height)) {
        throw ManifestError("image " + ai.source_id + ": declared size differs from the file");
      }
      for (const nlohmann::json* a : by_image[id]) {
        const auto cat = a->at("category_id").get<std::int64_t>();
        auto it = categories.find(cat);
        if (it == categories.end()) throw ManifestError("annotation references unknown category " + std::to_string(cat));
        ai.instances.push_back({it->second, mask_from_segmentation(a->at("segmentation"), ai.image.width, ai.image.height)});
      }
      ai.validate();
      visit(ai);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("manifest " + manifest.string() + ": " + e.what());
  }
}

}  // namespace iconify
