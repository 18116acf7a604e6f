#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cabingaze/annotate.hpp"
#include "cabingaze/calib.hpp"
#include "cabingaze/errors.hpp"
#include "cabingaze/geom.hpp"
#include "cabingaze/image.hpp"

// Synthetic cabin: target layout, camera rig, two-sided chessboard capture,
// subject sampling, and a parametric face render. The DMS camera frame is the
// world frame; the driver sits in front of it around z = 0.6 m looking back
// toward the targets near the camera plane.
namespace cabingaze::synthcab {

struct LayoutConfig {
  geom::Vec3 cabin_min = geom::Vec3(-1.0, -0.75, -1.0);
  geom::Vec3 cabin_max = geom::Vec3(1.0, 0.75, 1.0);
  int targets_per_zone = 1;
  double target_jitter = 0.03;  // uniform per-axis wiggle around nominal spots

  int board_rows = 6;
  int board_cols = 9;
  double board_square = 0.05;
  double board_thickness = 0.003;

  void validate() const;  // throws BadLayout
};

struct ZoneTarget {
  geom::Vec3 position = geom::Vec3::Zero();  // DMS frame
  annotate::Zone zone = annotate::Zone::None;
};

struct CabinScene {
  uint64_t seed = 0;
  std::vector<ZoneTarget> targets;
  geom::PinholeCamera dms_camera;    // pose: identity (world frame)
  geom::PinholeCamera depth_camera;  // intrinsics only; pose below
  geom::RigidTransform depth_pose;   // depth-frame point -> DMS frame (ground truth)
  geom::RigidTransform board_pose;   // board front-face frame -> DMS frame
  calib::BoardSpec board;
};

CabinScene generate_cabin(uint64_t seed, const LayoutConfig& config);

void save_scene(const std::string& path, const CabinScene& scene);
CabinScene load_scene(const std::string& path);

struct SyntheticSubject {
  int subject_id = 0;
  annotate::Posture posture = annotate::Posture::Free;
  geom::Vec3 base_face_center = geom::Vec3(0.0, 0.0, 0.6);
  double position_radius = 0.05;      // face-center wander, metres
  double head_yaw_range_deg = 25.0;   // head orientation sampling range
  double head_pitch_range_deg = 15.0;
  uint64_t seed = 0;
};

// n records cycling through the scene targets. Landmarks are [nose,
// nose + 0.1 * head_forward], which is how records carry head orientation.
std::vector<annotate::SampleRecord> sample_frames(const CabinScene& scene,
                                                  const SyntheticSubject& subject, int n);

struct ChessboardSim {
  std::vector<calib::CornerObservation> front;  // DMS camera pixels
  std::vector<calib::CornerObservation> back;   // depth camera pixels
  geom::RigidTransform front_pose;              // exact board front frame -> DMS
  geom::RigidTransform back_pose;               // exact board back frame -> depth
};

// Projects the front corners into the DMS camera and the back corners into
// the depth camera, adding i.i.d. Gaussian pixel noise. Throws BoardNotVisible
// if any corner lands outside an image or behind a camera.
ChessboardSim simulate_chessboard(const CabinScene& scene, double noise_px,
                                  uint64_t seed);

geom::Vec3 head_forward_from_record(const annotate::SampleRecord& rec);
geom::Mat3 head_rotation_from_forward(const geom::Vec3& forward);

// Bright face blob, two eye sockets with pupils displaced by the gaze angles
// relative to the head, and a dark nose marker displaced by the head angles.
// Deterministic in (record, camera, size).
image::ImageGray render_face(const annotate::SampleRecord& rec,
                             const geom::PinholeCamera& camera, int size);

// Intrinsics-only crop camera centred on the projected face, scaled so the
// blob radius covers `fill` of the half-size.
geom::PinholeCamera face_crop_camera(const annotate::SampleRecord& rec,
                                     const geom::PinholeCamera& full, int size,
                                     double fill);

// Blob radius used by the render, pixels at the face-centre depth.
double face_blob_radius_px(const geom::PinholeCamera& camera, double depth);

}  // namespace cabingaze::synthcab
