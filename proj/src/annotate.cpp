#include "cabingaze/annotate.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace cabingaze::annotate {

using geom::Vec3;

namespace {

const std::vector<std::string> kZoneNames = {
    "left-side mirror",
    "right-side mirror",
    "rear-view mirror",
    "central-control screen",
    "steering wheel",
    "handbrake",
    "dashboard",
    "left-side windshield",
    "right-side windshield",
    "none",
};

const std::vector<std::string> kPostureNames = {"fixed-head", "fixed-position", "free"};

}  // namespace

const std::string& zone_to_string(Zone z) {
  return kZoneNames[static_cast<size_t>(z)];
}

Zone zone_from_string(const std::string& name) {
  for (size_t i = 0; i < kZoneNames.size(); ++i) {
    if (kZoneNames[i] == name) return static_cast<Zone>(i);
  }
  throw UnknownZone("unknown gaze zone \"" + name + "\"");
}

const std::vector<Zone>& all_zones() {
  static const std::vector<Zone> zones = [] {
    std::vector<Zone> v;
    for (int i = 0; i < kZoneCount; ++i) v.push_back(static_cast<Zone>(i));
    return v;
  }();
  return zones;
}

const std::string& posture_to_string(Posture p) {
  return kPostureNames[static_cast<size_t>(p)];
}

Posture posture_from_string(const std::string& name) {
  for (size_t i = 0; i < kPostureNames.size(); ++i) {
    if (kPostureNames[i] == name) return static_cast<Posture>(i);
  }
  throw IoError("unknown posture \"" + name + "\"");
}

GazeLabel gaze_from_target(const Vec3& origin, const Vec3& target) {
  const Vec3 d = target - origin;
  const double len = d.norm();
  if (len <= 1e-6) {
    throw CoincidentPoints("gaze origin and target coincide (|t-o| = " +
                           std::to_string(len) + ")");
  }
  return label_from_vec(d / len);
}

std::pair<double, double> yawpitch_from_vec(const Vec3& v) {
  if (std::abs(v.norm() - 1.0) > 1e-9) {
    throw NotUnit("gaze vector norm " + std::to_string(v.norm()));
  }
  const double yaw = std::atan2(-v.x(), -v.z());
  const double pitch = std::asin(std::clamp(-v.y(), -1.0, 1.0));
  return {geom::rad_to_deg(yaw), geom::rad_to_deg(pitch)};
}

Vec3 vec_from_yawpitch(double yaw_deg, double pitch_deg) {
  const double yaw = geom::deg_to_rad(yaw_deg);
  const double pitch = geom::deg_to_rad(pitch_deg);
  return Vec3(-std::cos(pitch) * std::sin(yaw), -std::sin(pitch),
              -std::cos(pitch) * std::cos(yaw));
}

GazeLabel label_from_vec(const Vec3& unit_direction) {
  GazeLabel g;
  g.direction = unit_direction;
  std::tie(g.yaw_deg, g.pitch_deg) = yawpitch_from_vec(unit_direction);
  return g;
}

GazeLabel label_from_yawpitch(double yaw_deg, double pitch_deg) {
  GazeLabel g;
  g.direction = vec_from_yawpitch(yaw_deg, pitch_deg);
  g.yaw_deg = yaw_deg;
  g.pitch_deg = pitch_deg;
  return g;
}

SampleRecord build_record(const Vec3& face_center, const Vec3& target,
                          const std::string& zone_name,
                          const std::vector<Vec3>& landmarks, Posture posture,
                          const std::string& subject_id, const std::string& camera_id,
                          const std::string& target_id) {
  SampleRecord rec;
  rec.subject_id = subject_id;
  rec.camera_id = camera_id;
  rec.face_center = face_center;
  rec.target = target;
  rec.target_id = target_id;
  rec.gaze = gaze_from_target(face_center, target);
  rec.zone = zone_from_string(zone_name);
  rec.landmarks = landmarks;
  rec.posture = posture;
  return rec;
}

namespace {

nlohmann::json vec3_to_json(const Vec3& v) {
  return nlohmann::json{v.x(), v.y(), v.z()};
}

Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw IoError("expected a 3-vector");
  }
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

nlohmann::json camera_to_json(const geom::PinholeCamera& cam) {
  return nlohmann::json{{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx},
                        {"cy", cam.cy}, {"width", cam.width}, {"height", cam.height}};
}

geom::PinholeCamera camera_from_json(const nlohmann::json& j) {
  geom::PinholeCamera cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  return cam;
}

}  // namespace

std::string record_to_json_line(const SampleRecord& rec) {
  nlohmann::json j;
  j["subject_id"] = rec.subject_id;
  j["camera_id"] = rec.camera_id;
  j["face_center"] = vec3_to_json(rec.face_center);
  j["target"] = vec3_to_json(rec.target);
  j["target_id"] = rec.target_id;
  j["gaze"] = {{"direction", vec3_to_json(rec.gaze.direction)},
               {"yaw", rec.gaze.yaw_deg},
               {"pitch", rec.gaze.pitch_deg}};
  j["zone"] = zone_to_string(rec.zone);
  nlohmann::json lm = nlohmann::json::array();
  for (const auto& p : rec.landmarks) lm.push_back(vec3_to_json(p));
  j["landmarks"] = lm;
  j["posture"] = posture_to_string(rec.posture);
  if (!rec.image_ref.empty()) j["image_ref"] = rec.image_ref;
  if (rec.has_ext) {
    nlohmann::json ext;
    if (rec.ext.has_crop_camera) ext["crop_camera"] = camera_to_json(rec.ext.crop_camera);
    if (rec.ext.has_norm) {
      nlohmann::json rows = nlohmann::json::array();
      for (int r = 0; r < 3; ++r) {
        rows.push_back({rec.ext.norm_rotation(r, 0), rec.ext.norm_rotation(r, 1),
                        rec.ext.norm_rotation(r, 2)});
      }
      ext["norm"] = {{"R", rows},
                     {"gaze_n", vec3_to_json(rec.ext.gaze_normalized)},
                     {"image_ref", rec.ext.norm_image_ref}};
    }
    j["ext"] = ext;
  }
  return j.dump();
}

SampleRecord record_from_json_line(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw IoError("malformed record line");
  }
  SampleRecord rec;
  try {
    rec.subject_id = j.at("subject_id").get<std::string>();
    rec.camera_id = j.at("camera_id").get<std::string>();
    rec.face_center = vec3_from_json(j.at("face_center"));
    rec.target = vec3_from_json(j.at("target"));
    rec.target_id = j.at("target_id").get<std::string>();
    const auto& gj = j.at("gaze");
    rec.gaze.direction = vec3_from_json(gj.at("direction"));
    rec.gaze.yaw_deg = gj.at("yaw").get<double>();
    rec.gaze.pitch_deg = gj.at("pitch").get<double>();
    rec.zone = zone_from_string(j.at("zone").get<std::string>());
    for (const auto& p : j.at("landmarks")) rec.landmarks.push_back(vec3_from_json(p));
    rec.posture = posture_from_string(j.at("posture").get<std::string>());
    if (j.contains("image_ref")) rec.image_ref = j["image_ref"].get<std::string>();
    if (j.contains("ext")) {
      rec.has_ext = true;
      const auto& ext = j["ext"];
      if (ext.contains("crop_camera")) {
        rec.ext.has_crop_camera = true;
        rec.ext.crop_camera = camera_from_json(ext["crop_camera"]);
      }
      if (ext.contains("norm")) {
        rec.ext.has_norm = true;
        const auto& nj = ext["norm"];
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) {
            rec.ext.norm_rotation(r, c) = nj.at("R")[r][c].get<double>();
          }
        }
        rec.ext.gaze_normalized = vec3_from_json(nj.at("gaze_n"));
        rec.ext.norm_image_ref = nj.at("image_ref").get<std::string>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed record: ") + e.what());
  }
  return rec;
}

void save_records(const std::string& path, const std::vector<SampleRecord>& records) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  for (const auto& rec : records) {
    out << record_to_json_line(rec) << "\n";
  }
}

std::vector<SampleRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::vector<SampleRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(record_from_json_line(line));
  }
  return records;
}

}  // namespace cabingaze::annotate
