#include "cabingaze/normalize.hpp"

#include <cmath>

namespace cabingaze::normalize {

using geom::Mat3;
using geom::Vec3;

Method method_from_string(const std::string& name) {
  if (name == "ours") return Method::Ours;
  if (name == "legacy") return Method::Legacy;
  throw ConfigError("unknown normalization method \"" + name + "\"");
}

const std::string& method_to_string(Method m) {
  static const std::string ours = "ours";
  static const std::string legacy = "legacy";
  return m == Method::Ours ? ours : legacy;
}

void NormalizationConfig::validate() const {
  if (!(d_norm > 0.0)) throw ConfigError("d_norm must be positive");
  if (!(virtual_fx > 0.0) || !(virtual_fy > 0.0)) {
    throw ConfigError("virtual focal lengths must be positive");
  }
  if (out_width < 1 || out_height < 1) {
    throw ConfigError("normalized image size must be positive");
  }
}

geom::PinholeCamera NormalizationConfig::virtual_camera() const {
  validate();
  geom::PinholeCamera cam;
  cam.fx = virtual_fx;
  cam.fy = virtual_fy;
  cam.cx = out_width / 2.0;
  cam.cy = out_height / 2.0;
  cam.width = out_width;
  cam.height = out_height;
  return cam;
}

namespace {

// Build R with rows [x; y; z] from the z axis and an x seed.
geom::Rotation rotation_from_seed(const Vec3& z, const Vec3& x_seed) {
  const Vec3 zy = z.cross(x_seed);
  if (zy.norm() <= 1e-6) {
    throw DegenerateDirection("face direction parallel to the x seed");
  }
  const Vec3 y = zy.normalized();
  const Vec3 x = y.cross(z);
  Mat3 r;
  r.row(0) = x;
  r.row(1) = y;
  r.row(2) = z;
  return geom::Rotation::from_matrix(r);
}

}  // namespace

geom::Rotation normalization_rotation(const Vec3& face_center) {
  const double len = face_center.norm();
  if (len <= 1e-6) throw FaceAtOrigin("face center at the camera origin");
  return rotation_from_seed(face_center / len, Vec3(1.0, 0.0, 0.0));
}

geom::Rotation normalization_rotation_legacy(const geom::Rotation& head_rotation,
                                             const Vec3& face_center) {
  const double len = face_center.norm();
  if (len <= 1e-6) throw FaceAtOrigin("face center at the camera origin");
  return rotation_from_seed(face_center / len, head_rotation.col(0));
}

Mat3 scale_matrix(const Vec3& face_center, double d_norm) {
  const double len = face_center.norm();
  if (len <= 1e-6) throw FaceAtOrigin("face center at the camera origin");
  if (!(d_norm > 0.0)) throw ConfigError("d_norm must be positive");
  Mat3 s = Mat3::Identity();
  s(2, 2) = d_norm / len;
  return s;
}

Mat3 warp_homography(const geom::PinholeCamera& k_o, const geom::PinholeCamera& k_n,
                     const Mat3& s, const geom::Rotation& r) {
  k_o.validate();
  k_n.validate();
  const Mat3 h = k_n.matrix() * s * r.matrix() * k_o.inverse_matrix();
  if (std::abs(h.determinant()) <= 1e-12) {
    throw SingularHomography("normalization homography is singular");
  }
  return h;
}

image::ImageGray warp_image(const image::ImageGray& img, const geom::PinholeCamera& k_o,
                            const geom::PinholeCamera& k_n, const Mat3& s,
                            const geom::Rotation& r) {
  const Mat3 h = warp_homography(k_o, k_n, s, r);
  const Mat3 h_inv = h.inverse();

  image::ImageGray out(k_n.width, k_n.height);
  for (int v = 0; v < out.height; ++v) {
    for (int u = 0; u < out.width; ++u) {
      const Vec3 src = h_inv * Vec3(u, v, 1.0);
      if (std::abs(src.z()) <= 1e-12) {
        out.at(u, v) = 0.0;
        continue;
      }
      out.at(u, v) = img.sample_bilinear(src.x() / src.z(), src.y() / src.z());
    }
  }
  return out;
}

annotate::GazeLabel transform_gaze(const geom::Rotation& r, const annotate::GazeLabel& g_o) {
  return annotate::label_from_vec((r * g_o.direction).normalized());
}

annotate::GazeLabel inverse_transform_gaze(const geom::Rotation& r,
                                           const annotate::GazeLabel& g_n) {
  return annotate::label_from_vec((r.transpose() * g_n.direction).normalized());
}

NormalizationResult normalize_geometry(const Vec3& face_center,
                                       const annotate::GazeLabel& gaze,
                                       const geom::PinholeCamera& k_o,
                                       const NormalizationConfig& config,
                                       const geom::Rotation* head_rotation) {
  config.validate();
  NormalizationResult res;
  if (config.method == Method::Legacy) {
    if (head_rotation == nullptr) {
      throw ConfigError("legacy normalization needs a head rotation");
    }
    res.rotation = normalization_rotation_legacy(*head_rotation, face_center);
  } else {
    res.rotation = normalization_rotation(face_center);
  }
  res.scale = scale_matrix(face_center, config.d_norm);
  res.virtual_camera = config.virtual_camera();
  res.homography = warp_homography(k_o, res.virtual_camera, res.scale, res.rotation);
  res.gaze_normalized = transform_gaze(res.rotation, gaze);
  return res;
}

}  // namespace cabingaze::normalize
