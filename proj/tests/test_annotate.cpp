#include <doctest.h>

#include <cmath>
#include <random>

#include "cabingaze/annotate.hpp"
#include "cabingaze/errors.hpp"
#include "helpers.hpp"

using namespace cabingaze;
using testutil::random_unit;

TEST_CASE("gaze from target points down the ray") {
  const auto straight =
      annotate::gaze_from_target(geom::Vec3::Zero(), geom::Vec3(0.0, 0.0, 2.0));
  CHECK((straight.direction - geom::Vec3(0.0, 0.0, 1.0)).norm() == 0.0);

  const auto diag =
      annotate::gaze_from_target(geom::Vec3::Zero(), geom::Vec3(1.0, 1.0, 1.0));
  CHECK((diag.direction - geom::Vec3(1.0, 1.0, 1.0) / std::sqrt(3.0)).norm() <
        1e-15);

  CHECK_THROWS_AS(annotate::gaze_from_target(geom::Vec3(0.1, 0.2, 0.3),
                                             geom::Vec3(0.1, 0.2, 0.3)),
                  CoincidentPoints);
}

TEST_CASE("gaze is scale-invariant along the ray") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> scale(0.1, 50.0);
  for (int i = 0; i < 100; ++i) {
    const geom::Vec3 o = testutil::random_point(rng, 1.0);
    const geom::Vec3 d = random_unit(rng);
    const auto base = annotate::gaze_from_target(o, o + d);
    const auto far = annotate::gaze_from_target(o, o + scale(rng) * d);
    CHECK((base.direction - far.direction).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(base.yaw_deg == doctest::Approx(far.yaw_deg).epsilon(1e-12));
    CHECK(base.pitch_deg == doctest::Approx(far.pitch_deg).epsilon(1e-12));
  }
}

TEST_CASE("yaw-pitch convention pins the frontal direction to zero") {
  const auto [yaw0, pitch0] = annotate::yawpitch_from_vec(geom::Vec3(0.0, 0.0, -1.0));
  CHECK(yaw0 == 0.0);
  CHECK(pitch0 == 0.0);

  const auto [yaw_up, pitch_up] =
      annotate::yawpitch_from_vec(geom::Vec3(0.0, -1.0, 0.0));
  CHECK(pitch_up == doctest::Approx(90.0).epsilon(1e-12));
  (void)yaw_up;

  // Looking toward -x is positive yaw under yaw = atan2(-x, -z).
  const auto [yaw_left, pitch_left] =
      annotate::yawpitch_from_vec(geom::Vec3(-1.0, 0.0, -1.0).normalized());
  CHECK(yaw_left == doctest::Approx(45.0).epsilon(1e-12));
  CHECK(pitch_left == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("yaw-pitch round trip holds for random directions") {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 1000; ++i) {
    const geom::Vec3 v = random_unit(rng);
    const auto [yaw, pitch] = annotate::yawpitch_from_vec(v);
    CHECK(yaw > -180.0 - 1e-12);
    CHECK(yaw <= 180.0 + 1e-12);
    CHECK(std::abs(pitch) <= 90.0 + 1e-12);
    const geom::Vec3 back = annotate::vec_from_yawpitch(yaw, pitch);
    CHECK((back - v).norm() < 1e-9);
  }
}

TEST_CASE("zone names round-trip and unknown names are rejected") {
  CHECK(annotate::zone_from_string("left-side mirror") ==
        annotate::Zone::LeftSideMirror);
  CHECK_THROWS_AS(annotate::zone_from_string("roof"), UnknownZone);

  const auto& zones = annotate::all_zones();
  REQUIRE(static_cast<int>(zones.size()) == annotate::kZoneCount);
  for (const auto z : zones) {
    CHECK(annotate::zone_from_string(annotate::zone_to_string(z)) == z);
  }
  CHECK(annotate::zone_to_string(annotate::Zone::None) == "none");
}

TEST_CASE("posture names round-trip") {
  for (const auto p : {annotate::Posture::FixedHead, annotate::Posture::FixedPosition,
                       annotate::Posture::Free}) {
    CHECK(annotate::posture_from_string(annotate::posture_to_string(p)) == p);
  }
}

TEST_CASE("build_record derives the label from face center and target") {
  const geom::Vec3 o(0.02, -0.01, 0.61);
  const geom::Vec3 t(-0.35, 0.2, 0.05);
  const auto rec = annotate::build_record(o, t, "rear-view mirror",
                                          {o, o + geom::Vec3(0.0, 0.0, -0.1)},
                                          annotate::Posture::Free, "s01", "dms",
                                          "t03");
  const auto expected = annotate::gaze_from_target(o, t);
  CHECK((rec.gaze.direction - expected.direction).norm() == 0.0);
  CHECK(rec.gaze.yaw_deg == expected.yaw_deg);
  CHECK(rec.zone == annotate::Zone::RearViewMirror);
  CHECK(rec.face_center == o);
  CHECK(rec.target == t);
  CHECK(rec.landmarks.size() == 2);

  CHECK_THROWS_AS(annotate::build_record(o, t, "roof", {}, annotate::Posture::Free,
                                         "s", "c", "t"),
                  UnknownZone);
}

TEST_CASE("record JSON round trip preserves every numeric bit") {
  const geom::Vec3 o(1.0 / 3.0, -0.1 + 0.2, 0.6180339887498949);
  const geom::Vec3 t(std::sqrt(2.0), -std::sqrt(3.0), 0.05);
  auto rec = annotate::build_record(o, t, "handbrake",
                                    {o, o + geom::Vec3(0.01, 0.02, -0.097)},
                                    annotate::Posture::FixedPosition, "subj",
                                    "dms", "target-7");
  rec.image_ref = "images/r0007.pgm";
  rec.has_ext = true;
  rec.ext.has_crop_camera = true;
  rec.ext.crop_camera = geom::PinholeCamera{66.123456789, 65.987, 16.0 / 7.0,
                                            15.5, 32, 32};
  rec.ext.has_norm = true;
  rec.ext.norm_rotation << 0.99, 0.01, -0.02, -0.01, 0.98, 0.03, 0.02, -0.03, 0.97;
  rec.ext.gaze_normalized = geom::Vec3(0.123456789012345, -0.5, -0.857).normalized();
  rec.ext.norm_image_ref = "normalized/r0007.pgm";

  const auto line = annotate::record_to_json_line(rec);
  const auto parsed = annotate::record_from_json_line(line);
  CHECK(parsed.face_center == rec.face_center);
  CHECK(parsed.target == rec.target);
  CHECK(parsed.gaze.direction == rec.gaze.direction);
  CHECK(parsed.gaze.yaw_deg == rec.gaze.yaw_deg);
  CHECK(parsed.gaze.pitch_deg == rec.gaze.pitch_deg);
  CHECK(parsed.zone == rec.zone);
  CHECK(parsed.posture == rec.posture);
  CHECK(parsed.subject_id == rec.subject_id);
  CHECK(parsed.camera_id == rec.camera_id);
  CHECK(parsed.target_id == rec.target_id);
  CHECK(parsed.image_ref == rec.image_ref);
  REQUIRE(parsed.landmarks.size() == rec.landmarks.size());
  for (size_t i = 0; i < rec.landmarks.size(); ++i) {
    CHECK(parsed.landmarks[i] == rec.landmarks[i]);
  }
  REQUIRE(parsed.has_ext);
  CHECK(parsed.ext.crop_camera.fx == rec.ext.crop_camera.fx);
  CHECK(parsed.ext.crop_camera.cx == rec.ext.crop_camera.cx);
  CHECK(parsed.ext.norm_rotation == rec.ext.norm_rotation);
  CHECK(parsed.ext.gaze_normalized == rec.ext.gaze_normalized);
  CHECK(parsed.ext.norm_image_ref == rec.ext.norm_image_ref);
}

TEST_CASE("record files round-trip as JSONL") {
  const auto dir = testutil::fresh_dir("annotate_io");
  std::vector<annotate::SampleRecord> records;
  std::mt19937_64 rng(33);
  for (int i = 0; i < 7; ++i) {
    const geom::Vec3 o = testutil::random_point(rng, 0.1) + geom::Vec3(0, 0, 0.6);
    const geom::Vec3 t = testutil::random_point(rng, 0.5);
    records.push_back(annotate::build_record(
        o, t, "dashboard", {o}, annotate::Posture::Free,
        "s" + std::to_string(i), "dms", "t" + std::to_string(i)));
  }
  const auto path = (dir / "records.jsonl").string();
  annotate::save_records(path, records);
  const auto loaded = annotate::load_records(path);
  REQUIRE(loaded.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].gaze.direction == records[i].gaze.direction);
    CHECK(loaded[i].subject_id == records[i].subject_id);
  }

  CHECK_THROWS_AS(annotate::load_records((dir / "absent.jsonl").string()), IoError);
}
