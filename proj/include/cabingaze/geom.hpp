#pragma once

#include <Eigen/Dense>

#include "cabingaze/errors.hpp"

namespace cabingaze::geom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Proper rotation: orthonormal 3x3 matrix with det +1.
/// Construction through from_matrix checks both invariants (tolerance 1e-10);
/// composition and transposition stay inside the group and skip the check.
class Rotation {
public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return Rotation(); }

  /// Validates orthonormality and det +1; throws InvalidRotation otherwise.
  static Rotation from_matrix(const Mat3& m);

  /// Rodrigues formula. |axis| must be nonzero.
  static Rotation from_axis_angle(const Vec3& axis, double angle_rad);

  /// Nearest rotation to an arbitrary 3x3 matrix (SVD projection, det fixed).
  static Rotation closest(const Mat3& m);

  const Mat3& matrix() const { return m_; }

  Vec3 operator*(const Vec3& p) const { return m_ * p; }

  Rotation operator*(const Rotation& other) const {
    return Rotation(m_ * other.m_, Unchecked{});
  }

  Rotation transpose() const { return Rotation(m_.transpose(), Unchecked{}); }

  Vec3 row(int i) const { return m_.row(i).transpose(); }
  Vec3 col(int i) const { return m_.col(i); }

private:
  struct Unchecked {};
  Rotation(const Mat3& m, Unchecked) : m_(m) {}

  Mat3 m_;
};

/// Rigid motion p -> R p + t. Translation in meters.
struct RigidTransform {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

/// result applies b first, then a: (a o b)(p) = a(b(p)).
RigidTransform compose_rigid(const RigidTransform& a, const RigidTransform& b);

/// Inverse motion; inverse rotation is the transpose.
RigidTransform invert_rigid(const RigidTransform& a);

/// Pinhole camera, no distortion. Focal lengths and principal point in pixels.
struct PinholeCamera {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws ConfigError unless fx,fy > 0 and the principal point is inside the image.
  void validate() const;

  /// Intrinsic matrix K.
  Mat3 matrix() const;
  Mat3 inverse_matrix() const;

  bool contains(const Vec2& px) const {
    return px.x() >= 0.0 && px.x() < width && px.y() >= 0.0 && px.y() < height;
  }
};

/// u = fx x/z + cx, v = fy y/z + cy. Throws BehindCamera for z <= 1e-9.
Vec2 project_point(const PinholeCamera& cam, const Vec3& p);

/// Inverse of project_point at the given depth (z = depth).
Vec3 unproject_point(const PinholeCamera& cam, const Vec2& px, double depth);

/// Half line from origin along a unit direction.
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  /// Throws NotUnit unless |direction| = 1 within 1e-12.
  void validate() const;
};

/// Plane {p : p . normal = offset}, unit normal, offset in meters.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;

  void validate() const;
};

/// Geodesic distance on SO(3) in degrees, clamped to [0, 180].
double rotation_geodesic_deg(const Rotation& a, const Rotation& b);

}  // namespace cabingaze::geom
