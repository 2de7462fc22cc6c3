#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace ynet {

/// 8-bit interleaved image (HWC).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool empty() const { return pixels.empty(); }
  friend bool operator==(const Image&, const Image&) = default;
};

enum class Interp { Nearest, Bilinear };

/// Row-major 3x3 matrix mapping output pixel indices (x, y, 1) to source
/// pixel indices (homogeneous). Pixel centers sit at integer coordinates.
using Homography = std::array<double, 9>;

Homography identity_homography();
Homography multiply(const Homography& a, const Homography& b);
Homography invert(const Homography& h);
std::array<double, 2> apply(const Homography& h, double x, double y);

/// Resamples `src` onto a width x height grid through `out_to_src`. Samples
/// falling outside the source are `fill`.
Image warp(const Image& src, const Homography& out_to_src, std::size_t width, std::size_t height, Interp interp,
           std::uint8_t fill = 0);

/// Half-pixel-center resize; the identity when the size is unchanged.
Image resize(const Image& src, std::size_t width, std::size_t height, Interp interp);
Image crop(const Image& src, std::size_t x0, std::size_t y0, std::size_t width, std::size_t height);
Image flip_horizontal(const Image& src);
Image flip_vertical(const Image& src);

/// PNG I/O via libpng. `channels` selects gray (1) or RGB (3) on read.
Image read_png(const std::filesystem::path& path, std::size_t channels);
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace ynet
