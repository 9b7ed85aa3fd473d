#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "debiaskit/geometry.hpp"

namespace debiaskit {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct ImageRaster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  static ImageRaster blank(int w, int h) {
    ImageRaster r;
    r.width = w;
    r.height = h;
    r.rgb.assign(std::size_t(w) * std::size_t(h) * 3, 0);
    return r;
  }
  std::uint8_t* px(int x, int y) {
    return rgb.data() + (std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3;
  }
  const std::uint8_t* px(int x, int y) const {
    return rgb.data() + (std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3;
  }
  bool operator==(const ImageRaster&) const = default;
};

// Copies the pixels under box into a new raster. The box must lie fully
// inside the frame; otherwise OutOfFrame.
ImageRaster crop(const ImageRaster& image, const BBox& box);

// Binary PPM (P6, maxval 255). Byte-for-byte deterministic output.
std::string ppm_bytes(const ImageRaster& image);
void write_ppm(const ImageRaster& image, const std::string& path);
ImageRaster read_ppm(const std::string& path);  // throws MalformedFile

}  // namespace debiaskit
