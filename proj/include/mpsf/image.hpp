#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpsf {

// Row-major RGB image, values in [0,1].
struct Image {
  int width = 0, height = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0.0) {}

  std::array<double, 3> at(int x, int y) const {
    size_t i = (static_cast<size_t>(y) * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  void set(int x, int y, const std::array<double, 3>& c) {
    size_t i = (static_cast<size_t>(y) * width + x) * 3;
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
  }
};

inline double luminance709(const std::array<double, 3>& c) {
  return 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2];
}

inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open image for writing: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> bytes(img.rgb.size());
  for (size_t i = 0; i < img.rgb.size(); ++i) {
    double v = std::fmin(1.0, std::fmax(0.0, img.rgb[i]));
    bytes[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("image write failed: " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error(path + ": not a P6 PPM");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error(path + ": unsupported PPM header");
  in.get();  // single whitespace after header
  Image img(w, h);
  std::vector<uint8_t> bytes(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw std::runtime_error(path + ": truncated pixel data");
  for (size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace mpsf
