#include "ynet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ynet {

Homography identity_homography() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Homography multiply(const Homography& a, const Homography& b) {
  Homography r{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      r[i * 3 + j] = s;
    }
  }
  return r;
}

Homography invert(const Homography& m) {
  const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5], g = m[6], h = m[7], i = m[8];
  const double A = e * i - f * h, B = -(d * i - f * g), C = d * h - e * g;
  const double det = a * A + b * B + c * C;
  if (std::abs(det) < 1e-15) throw std::invalid_argument("invert: singular transform");
  const double s = 1.0 / det;
  return {A * s, -(b * i - c * h) * s, (b * f - c * e) * s,
          B * s, (a * i - c * g) * s,  -(a * f - c * d) * s,
          C * s, -(a * h - b * g) * s, (a * e - b * d) * s};
}

std::array<double, 2> apply(const Homography& h, double x, double y) {
  const double w = h[6] * x + h[7] * y + h[8];
  return {(h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w};
}

namespace {

// Writes the sample at source index coordinates (sx, sy), clamped to the image.
void sample_into(const Image& src, double sx, double sy, Interp interp, std::uint8_t* dst) {
  const double W = static_cast<double>(src.width), H = static_cast<double>(src.height);
  const double cx = std::clamp(sx, 0.0, W - 1), cy = std::clamp(sy, 0.0, H - 1);
  if (interp == Interp::Nearest) {
    const auto ix = static_cast<std::size_t>(std::min(std::floor(cx + 0.5), W - 1));
    const auto iy = static_cast<std::size_t>(std::min(std::floor(cy + 0.5), H - 1));
    for (std::size_t c = 0; c < src.channels; ++c) dst[c] = src.at(ix, iy, c);
    return;
  }
  const auto x0 = static_cast<std::size_t>(std::floor(cx));
  const auto y0 = static_cast<std::size_t>(std::floor(cy));
  const std::size_t x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
  const double fx = cx - static_cast<double>(x0), fy = cy - static_cast<double>(y0);
  for (std::size_t c = 0; c < src.channels; ++c) {
    const double top = src.at(x0, y0, c) * (1 - fx) + src.at(x1, y0, c) * fx;
    const double bot = src.at(x0, y1, c) * (1 - fx) + src.at(x1, y1, c) * fx;
    dst[c] = static_cast<std::uint8_t>(std::clamp(std::lround(top * (1 - fy) + bot * fy), 0L, 255L));
  }
}

}  // namespace

Image warp(const Image& src, const Homography& out_to_src, std::size_t width, std::size_t height, Interp interp,
           std::uint8_t fill) {
  Image out(width, height, src.channels, fill);
  const double W = static_cast<double>(src.width), H = static_cast<double>(src.height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const auto [sx, sy] = apply(out_to_src, static_cast<double>(x), static_cast<double>(y));
      if (!(sx >= -0.5 && sx <= W - 0.5 && sy >= -0.5 && sy <= H - 0.5)) continue;
      sample_into(src, sx, sy, interp, &out.pixels[(y * width + x) * src.channels]);
    }
  }
  return out;
}

Image resize(const Image& src, std::size_t width, std::size_t height, Interp interp) {
  if (width == src.width && height == src.height) return src;
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  Image out(width, height, src.channels);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      sample_into(src, (static_cast<double>(x) + 0.5) * sx - 0.5, (static_cast<double>(y) + 0.5) * sy - 0.5, interp,
                  &out.pixels[(y * width + x) * src.channels]);
    }
  }
  return out;
}

Image crop(const Image& src, std::size_t x0, std::size_t y0, std::size_t width, std::size_t height) {
  if (x0 + width > src.width || y0 + height > src.height || width == 0 || height == 0) {
    throw std::out_of_range("crop: rectangle outside image");
  }
  Image out(width, height, src.channels);
  for (std::size_t y = 0; y < height; ++y) {
    std::copy_n(&src.pixels[((y0 + y) * src.width + x0) * src.channels], width * src.channels,
                &out.pixels[y * width * src.channels]);
  }
  return out;
}

Image flip_horizontal(const Image& src) {
  Image out(src.width, src.height, src.channels);
  for (std::size_t y = 0; y < src.height; ++y) {
    for (std::size_t x = 0; x < src.width; ++x) {
      for (std::size_t c = 0; c < src.channels; ++c) out.at(src.width - 1 - x, y, c) = src.at(x, y, c);
    }
  }
  return out;
}

Image flip_vertical(const Image& src) {
  Image out(src.width, src.height, src.channels);
  for (std::size_t y = 0; y < src.height; ++y) {
    std::copy_n(&src.pixels[y * src.width * src.channels], src.width * src.channels,
                &out.pixels[(src.height - 1 - y) * src.width * src.channels]);
  }
  return out;
}

Image read_png(const std::filesystem::path& path, std::size_t channels) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("read_png: channels must be 1 or 3");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image out(img.width, img.height, channels);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_png: channels must be 1 or 3");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

}  // namespace ynet
