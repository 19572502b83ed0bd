#include "iconify/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace iconify {

Image::Image(std::size_t w, std::size_t h, Rgb fill) : width(w), height(h), pixels(w * h * 3) {
  for (std::size_t i = 0; i < w * h; ++i) std::memcpy(&pixels[i * 3], fill.data(), 3);
}

Image read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ImageIoError("read_png: " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out;
  out.width = img.width;
  out.height = img.height;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ImageIoError("read_png: " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height * 3) {
    throw ImageIoError("write_png: " + path.string() + ": malformed image buffer");
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw ImageIoError("write_png: " + path.string() + ": " + img.message);
  }
}

std::uint8_t denormalize_level(double v) {
  const double scaled = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

Tensor<float> to_tensor(const Image& image) {
  Tensor<float> t(Shape{1, 3, image.height, image.width});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) t.at(0, c, y, x) = normalize_level(image.at(x, y, c));
  return t;
}

template <typename T>
Image to_image(const Tensor<T>& t, std::size_t n) {
  require_rank(t.shape(), 4, "to_image");
  if (t.dim(1) != 3) throw ShapeError("to_image: expected 3 channels, got " + to_string(t.shape()));
  Image out(t.dim(3), t.dim(2));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x) out.at(x, y, c) = denormalize_level(t.at(n, c, y, x));
  return out;
}

template Image to_image(const Tensor<float>&, std::size_t);
template Image to_image(const Tensor<double>&, std::size_t);

}  // namespace iconify
