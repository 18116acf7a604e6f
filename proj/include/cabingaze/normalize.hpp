#pragma once

#include <string>

#include "cabingaze/annotate.hpp"
#include "cabingaze/errors.hpp"
#include "cabingaze/geom.hpp"
#include "cabingaze/image.hpp"

namespace cabingaze::normalize {

enum class Method { Ours, Legacy };

Method method_from_string(const std::string& name);
const std::string& method_to_string(Method m);

struct NormalizationConfig {
  double d_norm = 0.6;
  double virtual_fx = 960.0;
  double virtual_fy = 960.0;
  int out_width = 224;
  int out_height = 224;
  Method method = Method::Ours;

  void validate() const;
  geom::PinholeCamera virtual_camera() const;  // principal point at the image center
};

struct NormalizationResult {
  geom::Rotation rotation;                          // R, rows [x; y; z]
  geom::Mat3 scale = geom::Mat3::Identity();        // S
  geom::Mat3 homography = geom::Mat3::Identity();   // H = K_n S R K_o^-1
  geom::PinholeCamera virtual_camera;
  annotate::GazeLabel gaze_normalized;
};

// Virtual-camera rotation: z toward the face, y from z x (1,0,0), x = y x z.
geom::Rotation normalization_rotation(const geom::Vec3& face_center);

// Head-pose-seeded variant: the x axis starts from the head frame instead of
// the camera x axis, then gets orthogonalized the same way.
geom::Rotation normalization_rotation_legacy(const geom::Rotation& head_rotation,
                                             const geom::Vec3& face_center);

geom::Mat3 scale_matrix(const geom::Vec3& face_center, double d_norm);

geom::Mat3 warp_homography(const geom::PinholeCamera& k_o, const geom::PinholeCamera& k_n,
                           const geom::Mat3& s, const geom::Rotation& r);

image::ImageGray warp_image(const image::ImageGray& img, const geom::PinholeCamera& k_o,
                            const geom::PinholeCamera& k_n, const geom::Mat3& s,
                            const geom::Rotation& r);

annotate::GazeLabel transform_gaze(const geom::Rotation& r, const annotate::GazeLabel& g_o);
annotate::GazeLabel inverse_transform_gaze(const geom::Rotation& r,
                                           const annotate::GazeLabel& g_n);

// Rotation + scale + gaze transfer for one sample; pass the head rotation only
// for the legacy method.
NormalizationResult normalize_geometry(const geom::Vec3& face_center,
                                       const annotate::GazeLabel& gaze,
                                       const geom::PinholeCamera& k_o,
                                       const NormalizationConfig& config,
                                       const geom::Rotation* head_rotation = nullptr);

}  // namespace cabingaze::normalize
