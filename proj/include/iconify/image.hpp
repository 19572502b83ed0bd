#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "iconify/tensor.hpp"

namespace iconify {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rgb = std::array<std::uint8_t, 3>;
inline constexpr Rgb kWhite{255, 255, 255};

/// 8-bit RGB raster, row-major, interleaved.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, Rgb fill = kWhite);

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  Rgb rgb(std::size_t x, std::size_t y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }
  void set(std::size_t x, std::size_t y, Rgb v) {
    for (std::size_t c = 0; c < 3; ++c) at(x, y, c) = v[c];
  }

  bool operator==(const Image&) const = default;
};

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// 8-bit level to [-1, 1].
inline float normalize_level(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }
/// [-1, 1] to 8-bit, clamped after scaling.
std::uint8_t denormalize_level(double v);

/// 1 x 3 x H x W tensor in [-1, 1].
Tensor<float> to_tensor(const Image& image);
/// Sample `n` of an N x 3 x H x W tensor as an image.
template <typename T>
Image to_image(const Tensor<T>& t, std::size_t n = 0);

}  // namespace iconify
