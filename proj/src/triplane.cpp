#include "cabingaze/triplane.hpp"

#include <cmath>

namespace cabingaze::triplane {

using geom::Vec3;

TriPlaneHit intersect_triplane(const Vec3& origin, const Vec3& gaze, bool forward_only) {
  if (std::abs(gaze.norm() - 1.0) > 1e-9) {
    throw NotUnit("gaze direction norm " + std::to_string(gaze.norm()));
  }
  TriPlaneHit hit;
  for (int axis = 0; axis < 3; ++axis) {
    const double gn = gaze(axis);             // g . n for the axis-aligned normal
    if (std::abs(gn) <= 1e-9) continue;       // parallel: keep the sentinel
    const double t = -origin(axis) / gn;
    if (forward_only && t < 0.0) continue;
    hit.points[static_cast<size_t>(axis)] = origin + t * gaze;
    hit.valid[static_cast<size_t>(axis)] = true;
    hit.ray_t[static_cast<size_t>(axis)] = t;
  }
  return hit;
}

std::vector<double> positional_encoding(const std::vector<Vec3>& points, int bands,
                                        double scale) {
  if (bands < 1) throw ConfigError("positional encoding needs at least one band");
  if (!(scale > 0.0)) throw ConfigError("positional encoding scale must be positive");
  std::vector<double> out;
  out.reserve(points.size() * 3 * 2 * static_cast<size_t>(bands));
  for (const auto& p : points) {
    for (int axis = 0; axis < 3; ++axis) {
      const double c = p(axis) / scale;
      double freq = geom::kPi;
      for (int j = 0; j < bands; ++j) {
        out.push_back(std::sin(freq * c));
        out.push_back(std::cos(freq * c));
        freq *= 2.0;
      }
    }
  }
  return out;
}

std::vector<double> encode_triplane(const TriPlaneHit& hit, int bands, double scale) {
  std::vector<double> out = positional_encoding(
      {hit.points[0], hit.points[1], hit.points[2]}, bands, scale);
  for (int axis = 0; axis < 3; ++axis) {
    out.push_back(hit.valid[static_cast<size_t>(axis)] ? 1.0 : 0.0);
  }
  return out;
}

int encoded_length(int bands) { return 3 * 3 * 2 * bands + 3; }

}  // namespace cabingaze::triplane
