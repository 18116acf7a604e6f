#include <doctest.h>

#include <random>
#include <set>

#include "cabingaze/errors.hpp"
#include "cabingaze/model.hpp"
#include "cabingaze/model_ops.hpp"
#include "cabingaze/normalize.hpp"
#include "cabingaze/synthcab.hpp"
#include "helpers.hpp"

using namespace cabingaze;

namespace {

// One fully populated sample rendered through the synthetic pipeline.
model::TrainingSample pipeline_sample(uint64_t seed) {
  const auto scene = synthcab::generate_cabin(seed, {});
  synthcab::SyntheticSubject subj;
  subj.posture = annotate::Posture::Free;
  subj.seed = seed * 31 + 7;
  auto rec = synthcab::sample_frames(scene, subj, 1).at(0);

  const auto crop = synthcab::face_crop_camera(rec, scene.dms_camera, 32, 0.62);
  const auto original = synthcab::render_face(rec, crop, 32);

  normalize::NormalizationConfig ncfg;
  ncfg.virtual_fx = 66.0;
  ncfg.virtual_fy = 66.0;
  ncfg.out_width = 32;
  ncfg.out_height = 32;
  const auto res = normalize::normalize_geometry(rec.face_center, rec.gaze, crop, ncfg);
  const auto warped =
      normalize::warp_image(original, crop, res.virtual_camera, res.scale, res.rotation);

  rec.has_ext = true;
  rec.ext.has_norm = true;
  rec.ext.norm_rotation = res.rotation.matrix();
  rec.ext.gaze_normalized = res.gaze_normalized.direction;
  return model::make_training_sample(rec, original, warped, model::ModelConfig::tiny());
}

void zero_entries_with_suffix(model::GazeModel& net, const std::string& prefix,
                              const std::string& suffix) {
  for (const auto& e : net.layout().entries) {
    const bool starts = e.name.rfind(prefix, 0) == 0;
    const bool ends = e.name.size() >= suffix.size() &&
                      e.name.compare(e.name.size() - suffix.size(), suffix.size(),
                                     suffix) == 0;
    if (starts && ends) net.params().segment(e.offset, e.rows * e.cols).setZero();
  }
}

}  // namespace

TEST_CASE("parameter layout tiles the flat vector exactly once") {
  const model::GazeModel net(model::ModelConfig::tiny(), 3);
  const auto& layout = net.layout();
  int expected_offset = 0;
  std::set<std::string> names;
  for (const auto& e : layout.entries) {
    CHECK(e.offset == expected_offset);
    expected_offset += e.rows * e.cols;
    CHECK(names.insert(e.name).second);
  }
  CHECK(expected_offset == layout.total);
  CHECK(net.params().size() == layout.total);
  CHECK(layout.id("tok.n") >= 0);
  CHECK_THROWS_AS(layout.id("no.such.tensor"), BadLayout);
}

TEST_CASE("initialization is seed-deterministic and class-correct") {
  const model::GazeModel a(model::ModelConfig::tiny(), 9);
  const model::GazeModel b(model::ModelConfig::tiny(), 9);
  CHECK(a.params() == b.params());

  const model::GazeModel c(model::ModelConfig::tiny(), 10);
  CHECK(a.params() != c.params());

  using Init = model::ParamLayout::Entry::Init;
  for (const auto& e : a.layout().entries) {
    const auto seg = a.params().segment(e.offset, e.rows * e.cols);
    switch (e.init) {
      case Init::One:
        CHECK(seg.minCoeff() == 1.0);
        CHECK(seg.maxCoeff() == 1.0);
        break;
      case Init::Zero:
        CHECK(seg.cwiseAbs().maxCoeff() == 0.0);
        break;
      case Init::UniformFanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
        CHECK(seg.cwiseAbs().maxCoeff() <= bound);
        CHECK(seg.cwiseAbs().maxCoeff() > 0.0);
        break;
      }
      case Init::Token:
        CHECK(seg.cwiseAbs().maxCoeff() < 0.2);  // gaussian sigma 0.02
        CHECK(seg.cwiseAbs().maxCoeff() > 0.0);
        break;
    }
  }
}

TEST_CASE("training samples center and amplify pixel intensities") {
  const auto scene = synthcab::generate_cabin(2, {});
  synthcab::SyntheticSubject subj;
  auto rec = synthcab::sample_frames(scene, subj, 1).at(0);

  image::ImageGray flat(32, 32);
  for (auto& v : flat.data) v = 127.5;
  const auto sample =
      model::make_training_sample(rec, flat, flat, model::ModelConfig::tiny());
  REQUIRE(sample.image_original.size() == 32 * 32);
  for (int i = 0; i < sample.image_original.size(); ++i) {
    CHECK(sample.image_original(i) ==
          doctest::Approx((127.5 / 255.0 - 0.35) * 4.0).epsilon(1e-12));
  }
  CHECK(sample.yaw_o == rec.gaze.yaw_deg);
  CHECK(sample.pitch_o == rec.gaze.pitch_deg);
  CHECK(sample.zone == static_cast<int>(rec.zone));

  // Without a stored normalization the rotation is derived from the face.
  const auto r = normalize::normalization_rotation(rec.face_center).matrix();
  CHECK((sample.norm_rotation - r).cwiseAbs().maxCoeff() == 0.0);

  image::ImageGray wrong(16, 16);
  CHECK_THROWS_AS(
      model::make_training_sample(rec, wrong, flat, model::ModelConfig::tiny()),
      ShapeMismatch);
}

TEST_CASE("pyramid features are linear in the image") {
  model::GazeModel net(model::ModelConfig::tiny(), 4);
  net.params().setZero();
  Eigen::VectorXd img = Eigen::VectorXd::Random(32 * 32);
  for (const auto feat : {net.pyramid_features(img, true),
                          net.pyramid_features(img, false)}) {
    for (const auto& f : feat) {
      REQUIRE(f.size() == net.config().width);
      CHECK(f.cwiseAbs().maxCoeff() == 0.0);
    }
  }

  model::GazeModel live(model::ModelConfig::tiny(), 5);
  zero_entries_with_suffix(live, "proj.", ".b");
  const auto once = live.pyramid_features(img, true);
  const auto twice = live.pyramid_features(2.0 * img, true);
  for (int i = 0; i < 4; ++i) {
    CHECK((twice[static_cast<size_t>(i)] - 2.0 * once[static_cast<size_t>(i)])
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }

  Eigen::VectorXd bad(100);
  CHECK_THROWS_AS(live.pyramid_features(bad, true), ShapeMismatch);
}

TEST_CASE("stream aggregation carries one or two leading tokens") {
  const model::GazeModel net(model::ModelConfig::tiny(), 6);
  std::mt19937_64 rng(71);
  std::array<Eigen::VectorXd, 4> feats;
  for (auto& f : feats) f = Eigen::VectorXd::Random(net.config().width);

  const auto seq_n = net.stream_aggregate(feats, true);
  const auto seq_o = net.stream_aggregate(feats, false);
  CHECK(seq_n.rows() == 1 + 4);
  CHECK(seq_o.rows() == 2 + 4);
  CHECK(seq_n.cols() == net.config().width);
  (void)rng;
}

TEST_CASE("zeroed value and ffn paths leave tokens at their embeddings") {
  model::GazeModel net(model::ModelConfig::tiny(), 7);
  for (const auto* stream : {"stream.n.", "stream.o."}) {
    zero_entries_with_suffix(net, stream, "attn.v.w");
    zero_entries_with_suffix(net, stream, "attn.v.b");
    zero_entries_with_suffix(net, stream, "attn.o.b");
    zero_entries_with_suffix(net, stream, "ffn.2.w");
    zero_entries_with_suffix(net, stream, "ffn.2.b");
  }
  std::array<Eigen::VectorXd, 4> feats;
  for (auto& f : feats) f = Eigen::VectorXd::Random(net.config().width);

  const auto& tok_entry = net.layout().entry(net.layout().id("tok.n"));
  const auto seq = net.stream_aggregate(feats, true);
  for (int j = 0; j < net.config().width; ++j) {
    CHECK(seq(0, j) == net.params()(tok_entry.offset + j));
  }
}

TEST_CASE("token outputs ignore level feature order") {
  const model::GazeModel net(model::ModelConfig::tiny(), 8);
  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  std::array<Eigen::VectorXd, 4> feats;
  for (auto& f : feats) {
    f.resize(net.config().width);
    for (int i = 0; i < f.size(); ++i) f(i) = u(rng);
  }
  const auto base = net.stream_aggregate(feats, false);
  std::array<Eigen::VectorXd, 4> shuffled = {feats[2], feats[0], feats[3], feats[1]};
  const auto permuted = net.stream_aggregate(shuffled, false);
  CHECK((base.row(0) - permuted.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((base.row(1) - permuted.row(1)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pose encodings break the fusion symmetry") {
  const model::GazeModel net(model::ModelConfig::tiny(), 9);
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  Eigen::VectorXd f1(net.config().width), f2(net.config().width);
  for (int i = 0; i < f1.size(); ++i) {
    f1(i) = u(rng);
    f2(i) = u(rng);
  }
  const geom::Vec3 z_id(0.0, 0.0, 1.0);
  const geom::Vec3 z_rot = geom::Vec3(0.1, -0.2, 0.97).normalized();

  // Equal poses: the fusion sequence is just permuted by a swap, and the
  // mean-pooled output cannot tell.
  const auto ab_same = net.fuse_dual_stream(f1, f2, z_id, z_id);
  const auto ba_same = net.fuse_dual_stream(f2, f1, z_id, z_id);
  CHECK((ab_same - ba_same).cwiseAbs().maxCoeff() < 1e-12);

  // Distinct poses pin each feature to its slot.
  const auto ab = net.fuse_dual_stream(f1, f2, z_rot, z_id);
  const auto ba = net.fuse_dual_stream(f2, f1, z_rot, z_id);
  CHECK((ab - ba).cwiseAbs().maxCoeff() > 1e-8);

  model::GazeModel dead(model::ModelConfig::tiny(), 10);
  dead.params().setZero();
  const auto silent = dead.fuse_dual_stream(
      Eigen::VectorXd::Zero(net.config().width),
      Eigen::VectorXd::Zero(net.config().width), z_id, z_rot);
  CHECK(silent.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward is deterministic and self-consistent") {
  const auto sample = pipeline_sample(11);
  const model::GazeModel net(model::ModelConfig::tiny(), 11);

  const auto r1 = net.forward(sample);
  const auto r2 = net.forward(sample);
  CHECK(r1.pred_fused == r2.pred_fused);
  CHECK(r1.gaze_n == r2.gaze_n);
  CHECK(r1.logits_zone == r2.logits_zone);
  for (int i = 0; i < 4; ++i) {
    CHECK(r1.pred_n.levels[static_cast<size_t>(i)] ==
          r2.pred_n.levels[static_cast<size_t>(i)]);
  }

  CHECK(r1.gaze_n.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r1.gaze_o.norm() == doctest::Approx(1.0).epsilon(1e-12));

  // The original-space direction is the normalized one pulled back through R.
  const geom::Vec3 pulled = sample.norm_rotation.transpose() * r1.gaze_n;
  CHECK((r1.gaze_o - pulled).cwiseAbs().maxCoeff() < 1e-12);

  // Fused prediction converts through the yaw/pitch convention.
  const geom::Vec3 from_angles =
      annotate::vec_from_yawpitch(r1.pred_fused(0), r1.pred_fused(1));
  CHECK((r1.gaze_n - from_angles).cwiseAbs().maxCoeff() < 1e-12);

  // Tri-plane hits belong to the original-space ray from the face center.
  const auto hits = triplane::intersect_triplane(sample.face_center, r1.gaze_o,
                                                 net.config().triplane_forward_only);
  for (int i = 0; i < 3; ++i) {
    const size_t u = static_cast<size_t>(i);
    CHECK(r1.hits.valid[u] == hits.valid[u]);
    CHECK(r1.hits.points[u] == hits.points[u]);
  }

  for (const auto* logits : {&r1.logits_pos, &r1.logits_visual, &r1.logits_zone}) {
    REQUIRE(logits->size() == annotate::kZoneCount);
    CHECK(model_ops::softmax(*logits).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("loss breakdown equals a term-by-term recomputation") {
  const auto sample = pipeline_sample(12);
  const model::GazeModel net(model::ModelConfig::tiny(), 12);
  const auto res = net.forward(sample);
  const auto lb = net.loss_breakdown(res, sample);

  auto l1 = [](const Eigen::Vector2d& pred, double yaw, double pitch) {
    return 0.5 * (std::abs(pred(0) - yaw) + std::abs(pred(1) - pitch));
  };
  auto ce = [&](const Eigen::VectorXd& logits) {
    return model_ops::softmax_ce_forward(logits, sample.zone, nullptr);
  };

  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const size_t u = static_cast<size_t>(i);
    CHECK(lb.level_n[u] == l1(res.pred_n.levels[u], sample.yaw_n, sample.pitch_n));
    CHECK(lb.level_o[u] == l1(res.pred_o.levels[u], sample.yaw_o, sample.pitch_o));
    total += lb.level_n[u] + lb.level_o[u];
  }
  CHECK(lb.final_n == l1(res.pred_n.final, sample.yaw_n, sample.pitch_n));
  CHECK(lb.final_o == l1(res.pred_o.final, sample.yaw_o, sample.pitch_o));
  CHECK(lb.fused == l1(res.pred_fused, sample.yaw_n, sample.pitch_n));
  total += lb.final_n + lb.final_o + lb.fused;
  CHECK(lb.ce_pos == ce(res.logits_pos));
  CHECK(lb.ce_visual == ce(res.logits_visual));
  CHECK(lb.ce_zone == ce(res.logits_zone));
  total += lb.ce_pos + lb.ce_visual + lb.ce_zone;

  CHECK(std::abs(lb.total({1.0, 1.0}) - total) < 1e-12);
  CHECK(lb.total({1.0, 0.0}) == lb.l1_sum());
  CHECK(lb.total({0.0, 1.0}) == lb.l2_sum());
  CHECK(lb.l2_sum() >= 0.0);
  CHECK(lb.l1_sum() >= 0.0);

  auto bad = sample;
  bad.zone = 99;
  CHECK_THROWS_AS(net.loss_breakdown(res, bad), LabelMissing);
}

TEST_CASE("perfect predictions drive the loss to zero") {
  auto sample = pipeline_sample(13);
  sample.yaw_n = 3.25;
  sample.pitch_n = -1.5;
  sample.yaw_o = 4.75;
  sample.pitch_o = 2.0;
  sample.zone = 2;

  model::ForwardResult res;
  for (auto* stream : {&res.pred_n, &res.pred_o}) {
    const bool original = stream == &res.pred_o;
    const double yaw = original ? sample.yaw_o : sample.yaw_n;
    const double pitch = original ? sample.pitch_o : sample.pitch_n;
    for (auto& level : stream->levels) level = Eigen::Vector2d(yaw, pitch);
    stream->final = Eigen::Vector2d(yaw, pitch);
  }
  res.pred_fused = Eigen::Vector2d(sample.yaw_n, sample.pitch_n);
  Eigen::VectorXd logits = Eigen::VectorXd::Constant(annotate::kZoneCount, -60.0);
  logits(sample.zone) = 60.0;
  res.logits_pos = res.logits_visual = res.logits_zone = logits;

  const model::GazeModel net(model::ModelConfig::tiny(), 13);
  const auto lb = net.loss_breakdown(res, sample);
  CHECK(lb.total({1.0, 1.0}) < 1e-12);
}

TEST_CASE("gradients match finite differences and respect the stop") {
  const auto sample = pipeline_sample(14);
  const model::GazeModel net(model::ModelConfig::tiny(), 14);

  const auto report = model::gradcheck(net, sample, 40, 99);
  CHECK(report.params_checked >= 40);
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.stop_grad_exact);
  CHECK(report.max_stopped_abs == 0.0);
  CHECK(report.unfrozen_fd_abs > 0.0);

  // Every stopped tensor's analytic gradient vanishes once the direct gaze
  // losses are masked away; the zone losses alone cannot reach them.
  const auto res = net.forward(sample);
  const auto grad = net.backward(res, sample, {0.0, 1.0});
  for (int id : net.stopped_entry_ids()) {
    const auto& e = net.layout().entry(id);
    CHECK(grad.segment(e.offset, e.rows * e.cols).cwiseAbs().maxCoeff() == 0.0);
  }

  // With the full loss, every level projection learns.
  const auto full = net.backward(res, sample, {1.0, 1.0});
  for (int i = 0; i < 4; ++i) {
    for (const std::string stream : {"proj.n.", "proj.o."}) {
      const auto& e = net.layout().entry(
          net.layout().id(stream + std::to_string(i) + ".w"));
      CHECK(full.segment(e.offset, e.rows * e.cols).cwiseAbs().maxCoeff() > 0.0);
    }
  }
}

TEST_CASE("fit respects the learning rate and the seed") {
  std::vector<model::TrainingSample> data;
  for (uint64_t s = 0; s < 4; ++s) data.push_back(pipeline_sample(20 + s));

  model::TrainingConfig frozen;
  frozen.lr = 0.0;
  frozen.epochs = 2;
  frozen.batch_size = 2;
  frozen.seed = 5;
  model::GazeModel net(model::ModelConfig::tiny(), 15);
  const Eigen::VectorXd before = net.params();
  model::fit(net, data, frozen);
  CHECK(net.params() == before);

  model::TrainingConfig cfg;
  cfg.lr = 0.005;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 5;
  model::GazeModel a(model::ModelConfig::tiny(), 15);
  model::GazeModel b(model::ModelConfig::tiny(), 15);
  const auto curve_a = model::fit(a, data, cfg);
  const auto curve_b = model::fit(b, data, cfg);
  CHECK(a.params() == b.params());
  REQUIRE(curve_a.epochs.size() == curve_b.epochs.size());
  for (size_t i = 0; i < curve_a.epochs.size(); ++i) {
    CHECK(curve_a.epochs[i].mean_loss == curve_b.epochs[i].mean_loss);
    CHECK(curve_a.epochs[i].mean_angular_error_deg ==
          curve_b.epochs[i].mean_angular_error_deg);
  }
  CHECK(curve_a.final_mean_angular_error_deg ==
        curve_b.final_mean_angular_error_deg);

  CHECK_THROWS_AS(model::fit(net, {}, cfg), EmptySet);

  model::TrainingConfig bad;
  bad.lr = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = model::TrainingConfig{};
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = model::TrainingConfig{};
  bad.clip_norm = -0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("a small step on one sample reduces its loss") {
  const auto sample = pipeline_sample(16);
  model::GazeModel net(model::ModelConfig::tiny(), 16);
  const double before =
      net.loss_breakdown(net.forward(sample), sample).total({1.0, 1.0});

  model::TrainingConfig cfg;
  cfg.lr = 1e-5;
  cfg.momentum = 0.0;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  model::fit(net, {sample}, cfg);
  const double after =
      net.loss_breakdown(net.forward(sample), sample).total({1.0, 1.0});
  CHECK(after < before);
}

TEST_CASE("checkpoints reload bit-identically") {
  const auto dir = testutil::fresh_dir("model_ckpt");
  const model::GazeModel net(model::ModelConfig::tiny(), 17);
  const auto path = (dir / "checkpoint.json").string();
  model::save_checkpoint(path, net);
  const auto back = model::load_checkpoint(path);
  CHECK(back.params() == net.params());
  CHECK(back.seed() == net.seed());
  CHECK(back.config().width == net.config().width);
  CHECK(back.config().image_size == net.config().image_size);

  testutil::write_file(dir / "broken.json", "not json");
  CHECK_THROWS_AS(model::load_checkpoint((dir / "broken.json").string()), IoError);
  CHECK_THROWS_AS(model::load_checkpoint((dir / "absent.json").string()), IoError);
}

TEST_CASE("model config validation rejects bad shapes") {
  model::ModelConfig cfg = model::ModelConfig::tiny();
  cfg.image_size = 48;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = model::ModelConfig::tiny();
  cfg.width = 33;  // not divisible by heads
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = model::ModelConfig::tiny();
  cfg.triplane_bands = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  CHECK_NOTHROW(model::ModelConfig::paper().validate());
}
