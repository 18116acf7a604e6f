#include "cabingaze/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace cabingaze::image {

double ImageGray::sample_bilinear(double x, double y) const {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double ax = x - x0;
  const double ay = y - y0;

  auto pixel = [&](int px, int py) -> double {
    if (px < 0 || px >= width || py < 0 || py >= height) return 0.0;
    return at(px, py);
  };

  return (1.0 - ax) * (1.0 - ay) * pixel(x0, y0) +
         ax * (1.0 - ay) * pixel(x0 + 1, y0) +
         (1.0 - ax) * ay * pixel(x0, y0 + 1) +
         ax * ay * pixel(x0 + 1, y0 + 1);
}

void write_pgm(const std::string& path, const ImageGray& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(img.width));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double v = std::clamp(img.at(x, y), 0.0, 255.0);
      row[static_cast<size_t>(x)] = static_cast<uint8_t>(std::lround(v));
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) {
    throw IoError("write failed for " + path);
  }
}

ImageGray read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::string magic;
  in >> magic;
  if (magic != "P5") {
    throw IoError(path + " is not a binary PGM (P5) file");
  }
  int width = 0, height = 0, maxval = 0;
  in >> width >> height >> maxval;
  if (!in || width <= 0 || height <= 0 || maxval != 255) {
    throw IoError(path + " has an unsupported PGM header");
  }
  in.get();  // single whitespace after maxval
  ImageGray img(width, height);
  std::vector<uint8_t> buf(static_cast<size_t>(width) * static_cast<size_t>(height));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) {
    throw IoError(path + " is truncated");
  }
  for (size_t i = 0; i < buf.size(); ++i) {
    img.data[i] = static_cast<double>(buf[i]);
  }
  return img;
}

}  // namespace cabingaze::image
