#pragma once

#include <array>
#include <vector>

#include "cabingaze/errors.hpp"
#include "cabingaze/geom.hpp"

namespace cabingaze::triplane {

// Intersections of the gaze ray with the planes x=0, y=0, z=0, in that order.
// An invalid plane (ray parallel to it) keeps the sentinel point (0,0,0).
struct TriPlaneHit {
  std::array<geom::Vec3, 3> points = {geom::Vec3::Zero(), geom::Vec3::Zero(),
                                      geom::Vec3::Zero()};
  std::array<bool, 3> valid = {false, false, false};
  std::array<double, 3> ray_t = {0.0, 0.0, 0.0};  // signed ray parameter
};

// Signed intersections by default; forward_only drops hits behind the origin.
TriPlaneHit intersect_triplane(const geom::Vec3& origin, const geom::Vec3& gaze,
                               bool forward_only = false);

// Frequency encoding: per coordinate c, [sin(2^j pi c/scale), cos(2^j pi c/scale)]
// for j = 0..bands-1. Output length = points.size() * 3 * 2 * bands.
std::vector<double> positional_encoding(const std::vector<geom::Vec3>& points, int bands,
                                        double scale);

// Encodings of the three (possibly sentinel) hit points, then one validity
// flag per plane. Length 3*3*2*bands + 3 (147 for the 8-band default).
std::vector<double> encode_triplane(const TriPlaneHit& hit, int bands, double scale);

inline constexpr int kDefaultBands = 8;
inline constexpr double kDefaultScale = 2.0;

int encoded_length(int bands);

}  // namespace cabingaze::triplane
