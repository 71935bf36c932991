#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynkit/common.hpp"

namespace dynkit {

// Row-major, top-down, interleaved channels, float32 storage.
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<float> pixels;

  static Image create(int w, int h, int c, float fill = 0.f) {
    Image im;
    im.width = w;
    im.height = h;
    im.channels = c;
    im.pixels.assign(static_cast<size_t>(w) * h * c, fill);
    return im;
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return pixels.size(); }
};

// PFM, float32 little-endian, 1 or 3 channels. Values round trip bit-exact.
Image read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Image& img);

// 8-bit gray or RGB PNG. Writing clamps to [0,1] and quantizes; reading
// maps back to [0,1]. All five scanline filters are understood on read;
// writing always uses filter 0.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

}  // namespace dynkit
