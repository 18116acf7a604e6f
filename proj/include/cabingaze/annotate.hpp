#pragma once

#include <string>
#include <vector>

#include "cabingaze/errors.hpp"
#include "cabingaze/geom.hpp"

namespace cabingaze::annotate {

// Gaze direction plus its angular form. Convention: yaw = atan2(-x,-z),
// pitch = asin(-y), so the frontal direction (0,0,-1) maps to (0,0).
struct GazeLabel {
  geom::Vec3 direction = geom::Vec3(0.0, 0.0, -1.0);
  double yaw_deg = 0.0;
  double pitch_deg = 0.0;
};

enum class Zone {
  LeftSideMirror,
  RightSideMirror,
  RearViewMirror,
  CentralControlScreen,
  SteeringWheel,
  Handbrake,
  Dashboard,
  LeftSideWindshield,
  RightSideWindshield,
  None,
};

inline constexpr int kZoneCount = 10;       // including None
inline constexpr int kNamedZoneCount = 9;   // excluding None

const std::string& zone_to_string(Zone z);
Zone zone_from_string(const std::string& name);  // throws UnknownZone
const std::vector<Zone>& all_zones();

enum class Posture { FixedHead, FixedPosition, Free };

const std::string& posture_to_string(Posture p);
Posture posture_from_string(const std::string& name);

GazeLabel gaze_from_target(const geom::Vec3& origin, const geom::Vec3& target);

std::pair<double, double> yawpitch_from_vec(const geom::Vec3& v);  // degrees
geom::Vec3 vec_from_yawpitch(double yaw_deg, double pitch_deg);

GazeLabel label_from_vec(const geom::Vec3& unit_direction);
GazeLabel label_from_yawpitch(double yaw_deg, double pitch_deg);

// Pipeline products attached to a record after normalization / cropping.
struct RecordExt {
  bool has_crop_camera = false;
  geom::PinholeCamera crop_camera;
  bool has_norm = false;
  geom::Mat3 norm_rotation = geom::Mat3::Identity();
  geom::Vec3 gaze_normalized = geom::Vec3(0.0, 0.0, -1.0);
  std::string norm_image_ref;
};

struct SampleRecord {
  std::string subject_id;
  std::string camera_id;
  geom::Vec3 face_center = geom::Vec3::Zero();
  geom::Vec3 target = geom::Vec3::Zero();
  std::string target_id;
  GazeLabel gaze;
  Zone zone = Zone::None;
  std::vector<geom::Vec3> landmarks;
  Posture posture = Posture::Free;
  std::string image_ref;  // empty when the record carries no raster
  bool has_ext = false;
  RecordExt ext;
};

SampleRecord build_record(const geom::Vec3& face_center, const geom::Vec3& target,
                          const std::string& zone_name,
                          const std::vector<geom::Vec3>& landmarks, Posture posture,
                          const std::string& subject_id, const std::string& camera_id,
                          const std::string& target_id);

std::string record_to_json_line(const SampleRecord& rec);
SampleRecord record_from_json_line(const std::string& line);

void save_records(const std::string& path, const std::vector<SampleRecord>& records);
std::vector<SampleRecord> load_records(const std::string& path);

}  // namespace cabingaze::annotate
