#include "cabingaze/geom.hpp"

#include <algorithm>
#include <cmath>

namespace cabingaze::geom {

namespace {
constexpr double kRotationTol = 1e-10;
}

Rotation Rotation::from_matrix(const Mat3& m) {
  const Mat3 gram = m.transpose() * m - Mat3::Identity();
  const double ortho_err = gram.cwiseAbs().maxCoeff();
  if (ortho_err >= kRotationTol) {
    throw InvalidRotation("matrix is not orthonormal, max |R^T R - I| = " +
                          std::to_string(ortho_err));
  }
  const double det = m.determinant();
  if (std::abs(det - 1.0) >= kRotationTol) {
    throw InvalidRotation("matrix determinant is " + std::to_string(det) +
                          ", expected +1");
  }
  return Rotation(m, Unchecked{});
}

Rotation Rotation::from_axis_angle(const Vec3& axis, double angle_rad) {
  const double n = axis.norm();
  if (n <= 0.0) {
    throw InvalidRotation("axis has zero length");
  }
  const Vec3 u = axis / n;
  const double c = std::cos(angle_rad);
  const double s = std::sin(angle_rad);
  Mat3 k;
  k << 0.0, -u.z(), u.y(),
       u.z(), 0.0, -u.x(),
      -u.y(), u.x(), 0.0;
  const Mat3 m = Mat3::Identity() * c + s * k + (1.0 - c) * (u * u.transpose());
  return Rotation(m, Unchecked{});
}

Rotation Rotation::closest(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return Rotation(r, Unchecked{});
}

RigidTransform compose_rigid(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

RigidTransform invert_rigid(const RigidTransform& a) {
  RigidTransform out;
  out.rotation = a.rotation.transpose();
  out.translation = -(out.rotation * a.translation);
  return out;
}

void PinholeCamera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("camera focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw ConfigError("camera resolution must be positive");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw ConfigError("principal point must lie inside the image");
  }
}

Mat3 PinholeCamera::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx,
       0.0, fy, cy,
       0.0, 0.0, 1.0;
  return k;
}

Mat3 PinholeCamera::inverse_matrix() const {
  Mat3 k;
  k << 1.0 / fx, 0.0, -cx / fx,
       0.0, 1.0 / fy, -cy / fy,
       0.0, 0.0, 1.0;
  return k;
}

Vec2 project_point(const PinholeCamera& cam, const Vec3& p) {
  if (p.z() <= 1e-9) {
    throw BehindCamera("point at z = " + std::to_string(p.z()) +
                       " is not in front of the camera");
  }
  return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

Vec3 unproject_point(const PinholeCamera& cam, const Vec2& px, double depth) {
  return {(px.x() - cam.cx) / cam.fx * depth, (px.y() - cam.cy) / cam.fy * depth,
          depth};
}

void Ray::validate() const {
  if (std::abs(direction.norm() - 1.0) > 1e-12) {
    throw NotUnit("ray direction is not unit length");
  }
}

void Plane::validate() const {
  if (std::abs(normal.norm() - 1.0) > 1e-12) {
    throw NotUnit("plane normal is not unit length");
  }
}

double rotation_geodesic_deg(const Rotation& a, const Rotation& b) {
  const double tr = (a.matrix().transpose() * b.matrix()).trace();
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  return rad_to_deg(std::acos(c));
}

}  // namespace cabingaze::geom
