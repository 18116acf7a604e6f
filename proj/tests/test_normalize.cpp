#include <doctest.h>

#include <random>

#include "cabingaze/errors.hpp"
#include "cabingaze/metrics.hpp"
#include "cabingaze/normalize.hpp"
#include "cabingaze/synthcab.hpp"
#include "helpers.hpp"

using namespace cabingaze;
using testutil::random_unit;

TEST_CASE("virtual-camera rotation aligns the face direction with +z") {
  const auto frontal = normalize::normalization_rotation(geom::Vec3(0.0, 0.0, 1.0));
  CHECK(frontal.matrix().isIdentity(1e-15));

  const geom::Vec3 tilted(0.0, 0.1, 1.0);
  const auto r = normalize::normalization_rotation(tilted);
  CHECK((geom::Vec3(r.row(2)) - tilted.normalized()).norm() < 1e-12);
  CHECK((geom::Vec3(r.row(0)) - geom::Vec3(1.0, 0.0, 0.0)).norm() < 1e-12);

  CHECK_THROWS_AS(normalize::normalization_rotation(geom::Vec3(1.0, 0.0, 0.0)),
                  DegenerateDirection);
  CHECK_THROWS_AS(normalize::normalization_rotation(geom::Vec3::Zero()),
                  FaceAtOrigin);
}

TEST_CASE("rotation sends every face center to the virtual optical axis") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> xy(-0.5, 0.5), z(0.2, 2.0);
  for (int i = 0; i < 1000; ++i) {
    const geom::Vec3 fc(xy(rng), xy(rng), z(rng));
    const auto r = normalize::normalization_rotation(fc);
    const geom::Vec3 mapped = r * fc.normalized();
    CHECK((mapped - geom::Vec3(0.0, 0.0, 1.0)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((r.matrix() * r.matrix().transpose() - geom::Mat3::Identity())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("legacy rotation straightens a rolled head") {
  const auto id = normalize::normalization_rotation_legacy(
      geom::Rotation::identity(), geom::Vec3(0.0, 0.0, 1.0));
  CHECK(id.matrix().isIdentity(1e-12));

  // Head rolled about the camera axis, frontal face: the head x-axis must
  // land back on the image x direction (zero y component after rotation).
  const auto roll =
      geom::Rotation::from_axis_angle(geom::Vec3(0.0, 0.0, 1.0), geom::deg_to_rad(30.0));
  const auto r =
      normalize::normalization_rotation_legacy(roll, geom::Vec3(0.0, 0.0, 1.0));
  const geom::Vec3 head_x = roll.col(0);
  const geom::Vec3 mapped = r * head_x;
  CHECK(std::abs(mapped.y()) < 1e-12);
  CHECK(mapped.x() > 0.0);
  CHECK((r.matrix() * r.matrix().transpose() - geom::Mat3::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  // Head x parallel to the view direction leaves nothing to orthogonalize.
  const auto head_x_fwd =
      geom::Rotation::from_axis_angle(geom::Vec3(0.0, 1.0, 0.0), geom::kPi / 2.0);
  CHECK_THROWS_AS(normalize::normalization_rotation_legacy(head_x_fwd,
                                                           geom::Vec3(0.0, 0.0, 1.0)),
                  DegenerateDirection);
}

TEST_CASE("scale matrix fixes the virtual distance") {
  const auto id = normalize::scale_matrix(geom::Vec3(0.0, 0.0, 0.6), 0.6);
  CHECK(id.isIdentity(1e-12));

  const auto half = normalize::scale_matrix(geom::Vec3(0.0, 0.0, 1.2), 0.6);
  CHECK(half(0, 0) == 1.0);
  CHECK(half(1, 1) == 1.0);
  CHECK(half(2, 2) == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(normalize::scale_matrix(geom::Vec3::Zero(), 0.6), FaceAtOrigin);
}

TEST_CASE("warp homography composes intrinsics, scale, and rotation") {
  std::mt19937_64 rng(42);
  const geom::PinholeCamera k_o{600.0, 610.0, 320.0, 241.5, 640, 480};
  const geom::PinholeCamera k_n{960.0, 960.0, 112.0, 112.0, 224, 224};
  const geom::Vec3 fc(0.08, -0.05, 0.7);
  const auto r = normalize::normalization_rotation(fc);
  const auto s = normalize::scale_matrix(fc, 0.6);
  const auto h = normalize::warp_homography(k_o, k_n, s, r);
  const geom::Mat3 expected =
      k_n.matrix() * s * r.matrix() * k_o.inverse_matrix();
  CHECK((h - expected).cwiseAbs().maxCoeff() < 1e-12);
  (void)rng;
}

TEST_CASE("identity warp copies the image") {
  const geom::PinholeCamera cam{66.0, 66.0, 16.0, 16.0, 32, 32};
  image::ImageGray img(32, 32);
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> px(0.0, 255.0);
  for (auto& v : img.data) v = px(rng);

  const auto out = normalize::warp_image(img, cam, cam, geom::Mat3::Identity(),
                                         geom::Rotation::identity());
  REQUIRE(out.same_shape(img));
  for (size_t i = 0; i < img.data.size(); ++i) CHECK(out.data[i] == img.data[i]);
}

TEST_CASE("principal-point shift translates the image by whole pixels") {
  const geom::PinholeCamera k_o{66.0, 66.0, 16.0, 16.0, 32, 32};
  geom::PinholeCamera k_n = k_o;
  k_n.cx += 3.0;
  k_n.cy += 2.0;

  image::ImageGray img(32, 32);
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> px(0.0, 255.0);
  for (auto& v : img.data) v = px(rng);

  const auto out = normalize::warp_image(img, k_o, k_n, geom::Mat3::Identity(),
                                         geom::Rotation::identity());
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const int sx = x - 3, sy = y - 2;
      if (sx < 0 || sy < 0) continue;
      CHECK(std::abs(out.at(x, y) - img.at(sx, sy)) < 1e-9);
    }
  }
}

TEST_CASE("gaze transforms rotate with the virtual camera and invert exactly") {
  std::mt19937_64 rng(45);
  const auto g = annotate::label_from_vec(random_unit(rng));
  const auto same = normalize::transform_gaze(geom::Rotation::identity(), g);
  CHECK(same.direction == g.direction);

  for (int i = 0; i < 200; ++i) {
    const auto r = testutil::random_rotation(rng);
    const auto g_o = annotate::label_from_vec(random_unit(rng));
    const auto g_n = normalize::transform_gaze(r, g_o);
    CHECK((g_n.direction - r * g_o.direction).cwiseAbs().maxCoeff() < 1e-15);
    const auto back = normalize::inverse_transform_gaze(r, g_n);
    CHECK((back.direction - g_o.direction).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("angular error is invariant under the normalization rotation") {
  std::mt19937_64 rng(46);
  for (int i = 0; i < 200; ++i) {
    const auto r = testutil::random_rotation(rng);
    const geom::Vec3 a = random_unit(rng);
    const geom::Vec3 b = random_unit(rng);
    const double direct = metrics::angular_error_deg(a, b);
    const double rotated =
        metrics::angular_error_deg((r * a).normalized(), (r * b).normalized());
    CHECK(std::abs(direct - rotated) < 1e-9);
  }
}

TEST_CASE("normalize_geometry reports consistent pieces") {
  normalize::NormalizationConfig cfg;
  cfg.d_norm = 0.6;
  cfg.virtual_fx = 66.0;
  cfg.virtual_fy = 66.0;
  cfg.out_width = 32;
  cfg.out_height = 32;

  const geom::PinholeCamera k_o{600.0, 600.0, 320.0, 240.0, 640, 480};
  const geom::Vec3 fc(0.1, -0.06, 0.72);
  const auto gaze = annotate::gaze_from_target(fc, geom::Vec3(-0.3, 0.2, 0.0));
  const auto res = normalize::normalize_geometry(fc, gaze, k_o, cfg);

  CHECK(res.virtual_camera.cx == 16.0);
  CHECK(res.virtual_camera.cy == 16.0);
  const geom::Mat3 expected = res.virtual_camera.matrix() * res.scale *
                              res.rotation.matrix() * k_o.inverse_matrix();
  CHECK((res.homography - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((res.gaze_normalized.direction - res.rotation * gaze.direction)
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  cfg.d_norm = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("warped render puts the face blob on the virtual principal point") {
  const auto scene = synthcab::generate_cabin(3, {});
  synthcab::SyntheticSubject subj;
  subj.subject_id = 0;
  subj.posture = annotate::Posture::Free;
  subj.seed = 77;
  const auto records = synthcab::sample_frames(scene, subj, 3);

  normalize::NormalizationConfig cfg;
  cfg.d_norm = 0.6;
  cfg.virtual_fx = 66.0;
  cfg.virtual_fy = 66.0;
  cfg.out_width = 32;
  cfg.out_height = 32;

  for (const auto& rec : records) {
    const auto crop =
        synthcab::face_crop_camera(rec, scene.dms_camera, 32, 0.62);
    const auto img = synthcab::render_face(rec, crop, 32);
    const auto res = normalize::normalize_geometry(rec.face_center, rec.gaze, crop, cfg);
    const auto warped =
        normalize::warp_image(img, crop, res.virtual_camera, res.scale, res.rotation);
    const auto peak = testutil::blob_peak(warped);
    CHECK((peak - geom::Vec2(16.0, 16.0)).norm() < 0.5);
  }
}
