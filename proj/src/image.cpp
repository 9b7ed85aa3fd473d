#include "debiaskit/image.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "debiaskit/errors.hpp"

namespace debiaskit {

ImageRaster crop(const ImageRaster& image, const BBox& box) {
  if (box.x < 0 || box.y < 0 || box.w < 1 || box.h < 1 ||
      box.x2() > image.width || box.y2() > image.height) {
    throw OutOfFrame("crop box (" + std::to_string(box.x) + "," + std::to_string(box.y) +
                     "," + std::to_string(box.w) + "," + std::to_string(box.h) +
                     ") not inside " + std::to_string(image.width) + "x" +
                     std::to_string(image.height));
  }
  ImageRaster out = ImageRaster::blank(box.w, box.h);
  for (int y = 0; y < box.h; ++y) {
    std::memcpy(out.px(0, y), image.px(box.x, box.y + y), std::size_t(box.w) * 3);
  }
  return out;
}

std::string ppm_bytes(const ImageRaster& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

void write_ppm(const ImageRaster& image, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open for write: " + path);
  std::string bytes = ppm_bytes(image);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw MalformedFile("short write: " + path);
}

namespace {
// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) continue;
    tok.push_back(char(c));
    while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#') {
      tok.push_back(char(in.get()));
    }
    return tok;
  }
  return tok;
}
}  // namespace

ImageRaster read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open: " + path);
  if (next_token(f) != "P6") throw MalformedFile("not a P6 ppm: " + path);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(f));
    h = std::stoi(next_token(f));
    maxval = std::stoi(next_token(f));
  } catch (const std::exception&) {
    throw MalformedFile("bad ppm header: " + path);
  }
  if (w < 1 || h < 1) throw MalformedFile("bad ppm dimensions: " + path);
  if (maxval != 255) throw MalformedFile("unsupported ppm maxval: " + path);
  f.get();  // single whitespace byte after maxval
  ImageRaster out = ImageRaster::blank(w, h);
  f.read(reinterpret_cast<char*>(out.rgb.data()), std::streamsize(out.rgb.size()));
  if (std::size_t(f.gcount()) != out.rgb.size()) {
    throw MalformedFile("truncated ppm pixel data: " + path);
  }
  return out;
}

}  // namespace debiaskit
