#pragma once

#include <string>
#include <vector>

#include "cabingaze/errors.hpp"

namespace cabingaze::image {

/// Grayscale raster, row-major, intensities in [0, 255].
struct ImageGray {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  ImageGray() = default;
  ImageGray(int w, int h) : width(w), height(h), data(size_t(w) * size_t(h), 0.0) {}

  double& at(int x, int y) { return data[size_t(y) * size_t(width) + size_t(x)]; }
  double at(int x, int y) const { return data[size_t(y) * size_t(width) + size_t(x)]; }

  bool same_shape(const ImageGray& other) const {
    return width == other.width && height == other.height;
  }

  /// Bilinear sample at (x, y); out-of-bounds contributions read as 0.
  double sample_bilinear(double x, double y) const;
};

/// Binary 8-bit PGM (P5, maxval 255). Values are rounded and clamped on write.
void write_pgm(const std::string& path, const ImageGray& img);
ImageGray read_pgm(const std::string& path);

}  // namespace cabingaze::image
