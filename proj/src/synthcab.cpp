#include "cabingaze/synthcab.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>

namespace cabingaze::synthcab {

namespace {

// Nominal left-hand-drive spots in the DMS frame (x right, y down, z toward
// the driver), one per named zone, same order as the Zone enum.
const std::array<geom::Vec3, annotate::kNamedZoneCount> kNominalTargets = {
    geom::Vec3(0.85, 0.00, 0.30),    // left-side mirror
    geom::Vec3(-0.85, 0.00, 0.30),   // right-side mirror
    geom::Vec3(0.35, -0.40, 0.10),   // rear-view mirror
    geom::Vec3(-0.30, 0.25, 0.10),   // central-control screen
    geom::Vec3(0.10, 0.40, 0.15),    // steering wheel
    geom::Vec3(-0.40, 0.55, 0.30),   // handbrake
    geom::Vec3(0.05, 0.30, 0.05),    // dashboard
    geom::Vec3(0.45, -0.25, 0.00),   // left-side windshield
    geom::Vec3(-0.45, -0.25, 0.00),  // right-side windshield
};

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform_pm(std::mt19937_64& rng, double radius) {
  return std::uniform_real_distribution<double>(-radius, radius)(rng);
}

nlohmann::json vec3_json(const geom::Vec3& v) { return {v.x(), v.y(), v.z()}; }

geom::Vec3 vec3_from(const nlohmann::json& j) {
  return geom::Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

nlohmann::json camera_json(const geom::PinholeCamera& c) {
  return {{"fx", c.fx},       {"fy", c.fy},       {"cx", c.cx},
          {"cy", c.cy},       {"width", c.width}, {"height", c.height}};
}

geom::PinholeCamera camera_from(const nlohmann::json& j) {
  geom::PinholeCamera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  return c;
}

nlohmann::json pose_json(const geom::RigidTransform& p) {
  const geom::Mat3& m = p.rotation.matrix();
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return {{"R", rows}, {"t", vec3_json(p.translation)}};
}

geom::RigidTransform pose_from(const nlohmann::json& j) {
  geom::Mat3 m;
  const auto& rows = j.at("R");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = rows.at(r).at(c).get<double>();
  }
  geom::RigidTransform p;
  p.rotation = geom::Rotation::from_matrix(m);
  p.translation = vec3_from(j.at("t"));
  return p;
}

}  // namespace

void LayoutConfig::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!(cabin_min(i) < cabin_max(i))) {
      throw BadLayout("cabin_min must be strictly below cabin_max on every axis");
    }
  }
  if (targets_per_zone < 1) throw BadLayout("targets_per_zone must be at least 1");
  if (target_jitter < 0.0) throw BadLayout("target_jitter must be non-negative");
  if (board_rows < 3 || board_cols < 3) throw BadLayout("board grid must be at least 3x3");
  if (!(board_square > 0.0)) throw BadLayout("board_square must be positive");
  if (board_thickness < 0.0) throw BadLayout("board_thickness must be non-negative");
}

CabinScene generate_cabin(uint64_t seed, const LayoutConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);

  CabinScene scene;
  scene.seed = seed;

  for (int z = 0; z < annotate::kNamedZoneCount; ++z) {
    for (int k = 0; k < config.targets_per_zone; ++k) {
      geom::Vec3 pos = kNominalTargets[static_cast<size_t>(z)];
      pos += geom::Vec3(uniform_pm(rng, config.target_jitter),
                        uniform_pm(rng, config.target_jitter),
                        uniform_pm(rng, config.target_jitter));
      pos = pos.cwiseMax(config.cabin_min).cwiseMin(config.cabin_max);
      scene.targets.push_back({pos, annotate::all_zones()[static_cast<size_t>(z)]});
    }
  }

  scene.dms_camera = {600.0, 600.0, 320.0, 240.0, 640, 480};
  scene.depth_camera = {580.0, 580.0, 320.0, 240.0, 640, 480};

  // Depth camera sits past the chessboard and looks back toward the DMS.
  const double ry = geom::kPi + uniform_pm(rng, 0.04);
  const double rx = uniform_pm(rng, 0.04);
  const double rz = uniform_pm(rng, 0.04);
  scene.depth_pose.rotation = geom::Rotation::from_axis_angle(geom::Vec3::UnitY(), ry) *
                              geom::Rotation::from_axis_angle(geom::Vec3::UnitX(), rx) *
                              geom::Rotation::from_axis_angle(geom::Vec3::UnitZ(), rz);
  scene.depth_pose.translation =
      geom::Vec3(uniform_pm(rng, 0.02), -0.05 + uniform_pm(rng, 0.02),
                 1.55 + uniform_pm(rng, 0.02));

  // Board between the cameras, mildly tilted. The back face is the front
  // face mirrored about the board origin's y, so it hangs one board-height
  // below the front span; raising the origin keeps both faces well inside
  // both views.
  const double bx = 0.15 + uniform_pm(rng, 0.04);
  const double by = -0.10 + uniform_pm(rng, 0.04);
  scene.board_pose.rotation = geom::Rotation::from_axis_angle(geom::Vec3::UnitX(), bx) *
                              geom::Rotation::from_axis_angle(geom::Vec3::UnitY(), by);
  const double half_w = 0.5 * config.board_square * (config.board_cols - 1);
  scene.board_pose.translation =
      geom::Vec3(-half_w + uniform_pm(rng, 0.02), 0.03 + uniform_pm(rng, 0.02),
                 0.85 + uniform_pm(rng, 0.04));

  scene.board.rows = config.board_rows;
  scene.board.cols = config.board_cols;
  scene.board.square_size = config.board_square;
  scene.board.thickness = config.board_thickness;
  scene.board.mirror_mode = false;
  return scene;
}

void save_scene(const std::string& path, const CabinScene& scene) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : scene.targets) {
    targets.push_back(
        {{"position", vec3_json(t.position)}, {"zone", annotate::zone_to_string(t.zone)}});
  }
  nlohmann::json j = {{"seed", scene.seed},
                      {"dms_camera", camera_json(scene.dms_camera)},
                      {"depth_camera", camera_json(scene.depth_camera)},
                      {"depth_pose", pose_json(scene.depth_pose)},
                      {"board_pose", pose_json(scene.board_pose)},
                      {"board",
                       {{"rows", scene.board.rows},
                        {"cols", scene.board.cols},
                        {"square_size", scene.board.square_size},
                        {"thickness", scene.board.thickness},
                        {"mirror_mode", scene.board.mirror_mode}}},
                      {"targets", targets}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

CabinScene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IoError("malformed scene file " + path);
  CabinScene scene;
  try {
    scene.seed = j.at("seed").get<uint64_t>();
    scene.dms_camera = camera_from(j.at("dms_camera"));
    scene.depth_camera = camera_from(j.at("depth_camera"));
    scene.depth_pose = pose_from(j.at("depth_pose"));
    scene.board_pose = pose_from(j.at("board_pose"));
    const auto& b = j.at("board");
    scene.board.rows = b.at("rows").get<int>();
    scene.board.cols = b.at("cols").get<int>();
    scene.board.square_size = b.at("square_size").get<double>();
    scene.board.thickness = b.at("thickness").get<double>();
    scene.board.mirror_mode = b.at("mirror_mode").get<bool>();
    for (const auto& t : j.at("targets")) {
      scene.targets.push_back({vec3_from(t.at("position")),
                               annotate::zone_from_string(t.at("zone").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed scene file: ") + e.what());
  }
  return scene;
}

std::vector<annotate::SampleRecord> sample_frames(const CabinScene& scene,
                                                  const SyntheticSubject& subject, int n) {
  if (n < 1) throw ConfigError("frame count must be at least 1");
  if (scene.targets.empty()) throw EmptySet("scene has no targets");

  char sid[16];
  std::snprintf(sid, sizeof(sid), "s%03d", subject.subject_id);

  // Fixed-head runs hold one per-subject orientation for the whole segment.
  std::mt19937_64 base_rng(mix_seed(subject.seed, 0xBA5EULL));
  const double base_yaw = uniform_pm(base_rng, subject.head_yaw_range_deg);
  const double base_pitch = uniform_pm(base_rng, subject.head_pitch_range_deg);

  std::vector<annotate::SampleRecord> records;
  records.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(mix_seed(subject.seed, static_cast<uint64_t>(i)));
    const auto& target = scene.targets[static_cast<size_t>(i) % scene.targets.size()];

    geom::Vec3 face = subject.base_face_center;
    if (subject.posture != annotate::Posture::FixedPosition) {
      face += geom::Vec3(uniform_pm(rng, subject.position_radius),
                         uniform_pm(rng, subject.position_radius),
                         uniform_pm(rng, subject.position_radius));
    }

    double head_yaw = base_yaw;
    double head_pitch = base_pitch;
    if (subject.posture != annotate::Posture::FixedHead) {
      head_yaw = uniform_pm(rng, subject.head_yaw_range_deg);
      head_pitch = uniform_pm(rng, subject.head_pitch_range_deg);
    }
    const geom::Vec3 head_forward = annotate::vec_from_yawpitch(head_yaw, head_pitch);

    char tid[16];
    std::snprintf(tid, sizeof(tid), "t%02d",
                  static_cast<int>(static_cast<size_t>(i) % scene.targets.size()));
    auto rec = annotate::build_record(face, target.position,
                                      annotate::zone_to_string(target.zone),
                                      {face, face + 0.1 * head_forward}, subject.posture,
                                      sid, "dms", tid);
    records.push_back(std::move(rec));
  }
  return records;
}

ChessboardSim simulate_chessboard(const CabinScene& scene, double noise_px,
                                  uint64_t seed) {
  scene.board.validate();
  const auto flip = calib::chessboard_flip_transform(scene.board);

  ChessboardSim sim;
  sim.front_pose = scene.board_pose;
  sim.back_pose =
      geom::compose_rigid(geom::compose_rigid(geom::invert_rigid(scene.depth_pose),
                                              scene.board_pose),
                          flip);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, noise_px > 0.0 ? noise_px : 1.0);
  auto noisy = [&](const geom::Vec2& px) {
    if (noise_px <= 0.0) return px;
    return geom::Vec2(px.x() + gauss(rng), px.y() + gauss(rng));
  };

  for (const auto& corner : scene.board.grid()) {
    calib::CornerObservation front, back;
    front.board_xy = geom::Vec2(corner.x(), corner.y());
    back.board_xy = front.board_xy;
    geom::Vec2 fpx, bpx;
    try {
      fpx = geom::project_point(scene.dms_camera, sim.front_pose.apply(corner));
      bpx = geom::project_point(scene.depth_camera, sim.back_pose.apply(corner));
    } catch (const BehindCamera&) {
      throw BoardNotVisible("chessboard corner behind a camera");
    }
    if (!scene.dms_camera.contains(fpx) || !scene.depth_camera.contains(bpx)) {
      throw BoardNotVisible("chessboard corner projects outside an image");
    }
    front.pixel = noisy(fpx);
    back.pixel = noisy(bpx);
    sim.front.push_back(front);
    sim.back.push_back(back);
  }
  return sim;
}

geom::Vec3 head_forward_from_record(const annotate::SampleRecord& rec) {
  if (rec.landmarks.size() >= 2) {
    const geom::Vec3 d = rec.landmarks[1] - rec.landmarks[0];
    if (d.norm() > 1e-9) return d.normalized();
  }
  return rec.gaze.direction;
}

geom::Mat3 head_rotation_from_forward(const geom::Vec3& forward) {
  if (forward.norm() <= 1e-9) throw DegenerateDirection("head forward is a zero vector");
  const geom::Vec3 hz = forward.normalized();
  const geom::Vec3 cross = hz.cross(geom::Vec3::UnitX());
  if (cross.norm() <= 1e-6) {
    throw DegenerateDirection("head forward is parallel to the x-axis");
  }
  const geom::Vec3 hy = cross.normalized();
  const geom::Vec3 hx = hy.cross(hz);
  geom::Mat3 m;
  m.col(0) = hx;
  m.col(1) = hy;
  m.col(2) = hz;
  return m;
}

double face_blob_radius_px(const geom::PinholeCamera& camera, double depth) {
  return camera.fx * 0.09 / depth;
}

image::ImageGray render_face(const annotate::SampleRecord& rec,
                             const geom::PinholeCamera& camera, int size) {
  const geom::Vec2 center = geom::project_point(camera, rec.face_center);
  const double r = face_blob_radius_px(camera, rec.face_center.z());

  const auto [head_yaw, head_pitch] =
      annotate::yawpitch_from_vec(head_forward_from_record(rec));
  const double k_eye = 0.0050 * r;   // px per degree of gaze-vs-head
  const double k_head = 0.0050 * r;  // px per degree of head angle
  const double clamp_eye = 0.35 * r;
  auto clampd = [&](double v) { return std::clamp(v, -clamp_eye, clamp_eye); };
  const double eye_dx = clampd(-k_eye * (rec.gaze.yaw_deg - head_yaw));
  const double eye_dy = clampd(-k_eye * (rec.gaze.pitch_deg - head_pitch));
  const double nose_dx = -k_head * head_yaw;
  const double nose_dy = -k_head * head_pitch;

  // Dark pupils/nose on the bright blob never clip against 255, and they sit
  // several sigma away from the blob apex: at zero relative gaze and level
  // head they perturb the apex by ~0.05 px, far inside the warp budget.
  const double sig_fx = 0.80 * r, sig_fy = 0.95 * r;
  const double sig_pupil = 0.16 * r, sig_nose = 0.13 * r;
  const geom::Vec2 eye_l(-0.58 * r, -0.30 * r);
  const geom::Vec2 eye_r(0.58 * r, -0.30 * r);
  const geom::Vec2 pupil_off(eye_dx, eye_dy);
  const geom::Vec2 nose(nose_dx, 0.55 * r + nose_dy);

  auto gauss2 = [](const geom::Vec2& d, double sx, double sy) {
    return std::exp(-0.5 * (d.x() * d.x() / (sx * sx) + d.y() * d.y() / (sy * sy)));
  };

  image::ImageGray img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const geom::Vec2 p(x + 0.5 - center.x(), y + 0.5 - center.y());
      double v = 205.0 * gauss2(p, sig_fx, sig_fy);
      for (const auto& s : {eye_l, eye_r}) {
        v -= 140.0 * gauss2(p - s - pupil_off, sig_pupil, sig_pupil);
      }
      v -= 120.0 * gauss2(p - nose, sig_nose, sig_nose);
      img.at(x, y) = std::clamp(v, 0.0, 255.0);
    }
  }
  return img;
}

geom::PinholeCamera face_crop_camera(const annotate::SampleRecord& rec,
                                     const geom::PinholeCamera& full, int size,
                                     double fill) {
  if (size < 2 || !(fill > 0.0)) throw ConfigError("crop size/fill out of range");
  const geom::Vec2 center = geom::project_point(full, rec.face_center);
  const double r = face_blob_radius_px(full, rec.face_center.z());
  const double s = fill * size / 2.0 / r;
  geom::PinholeCamera crop;
  crop.fx = s * full.fx;
  crop.fy = s * full.fy;
  crop.cx = s * (full.cx - center.x()) + size / 2.0;
  crop.cy = s * (full.cy - center.y()) + size / 2.0;
  crop.width = size;
  crop.height = size;
  return crop;
}

}  // namespace cabingaze::synthcab
