#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cabingaze/calib.hpp"
#include "cabingaze/config.hpp"
#include "cabingaze/errors.hpp"
#include "cabingaze/image.hpp"
#include "cabingaze/metrics.hpp"
#include "cabingaze/model.hpp"
#include "cabingaze/normalize.hpp"
#include "cabingaze/synthcab.hpp"

namespace fs = std::filesystem;
using namespace cabingaze;

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct Cli {
  std::string cmd;
  std::string config_path;
  std::string preset;
  std::string out = "out";
  std::string in;
  std::string front_obs, back_obs;
  std::string checkpoint;
  std::string predictions;
  uint64_t seed = 0;
  bool seed_given = false;
  int params = 240;
};

config::PipelineConfig effective_config(const Cli& cli) {
  auto cfg = config::default_config();
  if (!cli.preset.empty()) config::apply_preset(cfg, cli.preset);
  if (!cli.config_path.empty()) config::merge_config_file(cfg, cli.config_path);
  if (cli.seed_given) cfg.seed = cli.seed;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

std::vector<annotate::SampleRecord> make_records(const synthcab::CabinScene& scene,
                                                 const config::PipelineConfig& cfg) {
  static const annotate::Posture cycle[3] = {annotate::Posture::FixedHead,
                                             annotate::Posture::FixedPosition,
                                             annotate::Posture::Free};
  std::vector<annotate::SampleRecord> all;
  for (int s = 0; s < cfg.synth.subjects; ++s) {
    synthcab::SyntheticSubject subj;
    subj.subject_id = s;
    subj.posture = cycle[s % 3];
    subj.position_radius = cfg.synth.position_radius;
    subj.head_yaw_range_deg = cfg.synth.head_yaw_range_deg;
    subj.head_pitch_range_deg = cfg.synth.head_pitch_range_deg;
    subj.seed = mix_seed(cfg.seed, 0x500 + static_cast<uint64_t>(s));
    auto recs = synthcab::sample_frames(scene, subj, cfg.synth.frames_per_subject);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  return all;
}

std::string raster_name(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "r%04d.pgm", static_cast<int>(index));
  return buf;
}

void cmd_simulate(const Cli& cli) {
  const auto cfg = effective_config(cli);
  const fs::path out(cli.out);
  fs::create_directories(out / "images");

  auto scene = synthcab::generate_cabin(cfg.seed, cfg.synth.layout);
  scene.dms_camera = cfg.front_camera;
  scene.depth_camera = cfg.back_camera;
  synthcab::save_scene((out / "scene.json").string(), scene);

  const auto sim =
      synthcab::simulate_chessboard(scene, cfg.synth.chessboard_noise_px,
                                    mix_seed(cfg.seed, 0xC0));
  calib::save_corner_observations((out / "corners_front.jsonl").string(), sim.front);
  calib::save_corner_observations((out / "corners_back.jsonl").string(), sim.back);

  auto records = make_records(scene, cfg);
  for (size_t i = 0; i < records.size(); ++i) {
    auto& rec = records[i];
    const auto crop = synthcab::face_crop_camera(rec, scene.dms_camera,
                                                 cfg.model.image_size, cfg.synth.crop_fill);
    const auto img = synthcab::render_face(rec, crop, cfg.model.image_size);
    const std::string name = "images/" + raster_name(i);
    image::write_pgm((out / name).string(), img);
    rec.image_ref = name;
    rec.has_ext = true;
    rec.ext.has_crop_camera = true;
    rec.ext.crop_camera = crop;
  }
  annotate::save_records((out / "records.jsonl").string(), records);

  nlohmann::json summary = {{"scene", "scene.json"},
                            {"records", records.size()},
                            {"corner_observations", sim.front.size()},
                            {"seed", cfg.seed}};
  std::cout << summary.dump() << "\n";
}

void cmd_calibrate(const Cli& cli) {
  const auto cfg = effective_config(cli);
  if (cli.front_obs.empty() || cli.back_obs.empty()) {
    throw ConfigError("calibrate needs --front and --back observation files");
  }
  const auto front = calib::load_corner_observations(cli.front_obs);
  const auto back = calib::load_corner_observations(cli.back_obs);
  calib::PoseEstimateDiagnostics df, db;
  const auto front_pose = calib::estimate_planar_pose(front, cfg.front_camera, &df);
  const auto back_pose = calib::estimate_planar_pose(back, cfg.back_camera, &db);
  auto result = calib::compose_cross_camera(front_pose, back_pose,
                                            calib::chessboard_flip_transform(cfg.board));
  result.residual_px = std::max(df.final_rmse_px, db.final_rmse_px);

  fs::path out(cli.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  calib::save_calibration(out.string(), result);
  std::cout << read_text(out);
}

void cmd_annotate(const Cli& cli) {
  const auto cfg = effective_config(cli);
  if (cli.in.empty()) throw ConfigError("annotate needs --in scene.json");
  const auto scene = synthcab::load_scene(cli.in);
  const auto records = make_records(scene, cfg);
  const fs::path out(cli.out);
  fs::create_directories(out);
  annotate::save_records((out / "records.jsonl").string(), records);
  nlohmann::json summary = {{"records", records.size()}, {"seed", cfg.seed}};
  std::cout << summary.dump() << "\n";
}

void cmd_normalize(const Cli& cli) {
  const auto cfg = effective_config(cli);
  if (cli.in.empty()) throw ConfigError("normalize needs --in dataset directory");
  const fs::path in(cli.in);
  const fs::path out(cli.out);
  fs::create_directories(out / "normalized");
  fs::create_directories(out / "images");
  const bool same_dir = fs::weakly_canonical(out) == fs::weakly_canonical(in);

  auto records = annotate::load_records((in / "records.jsonl").string());
  size_t warped = 0;
  for (auto& rec : records) {
    const geom::PinholeCamera k_o =
        rec.has_ext && rec.ext.has_crop_camera ? rec.ext.crop_camera : cfg.front_camera;

    geom::Rotation head;
    const geom::Rotation* head_ptr = nullptr;
    if (cfg.normalization.method == normalize::Method::Legacy) {
      head = geom::Rotation::from_matrix(
          synthcab::head_rotation_from_forward(synthcab::head_forward_from_record(rec)));
      head_ptr = &head;
    }
    const auto res =
        normalize::normalize_geometry(rec.face_center, rec.gaze, k_o, cfg.normalization,
                                      head_ptr);

    rec.has_ext = true;
    rec.ext.has_norm = true;
    rec.ext.norm_rotation = res.rotation.matrix();
    rec.ext.gaze_normalized = res.gaze_normalized.direction;

    if (!rec.image_ref.empty()) {
      const auto img = image::read_pgm((in / rec.image_ref).string());
      const auto flat =
          normalize::warp_image(img, k_o, res.virtual_camera, res.scale, res.rotation);
      const std::string name =
          "normalized/" + fs::path(rec.image_ref).filename().string();
      image::write_pgm((out / name).string(), flat);
      rec.ext.norm_image_ref = name;
      if (!same_dir) {
        fs::create_directories((out / rec.image_ref).parent_path());
        fs::copy_file(in / rec.image_ref, out / rec.image_ref,
                      fs::copy_options::overwrite_existing);
      }
      ++warped;
    }
  }
  annotate::save_records((out / "records.jsonl").string(), records);
  nlohmann::json summary = {{"records", records.size()}, {"normalized", warped}};
  std::cout << summary.dump() << "\n";
}

std::vector<model::TrainingSample> load_samples(const fs::path& dir,
                                                const std::vector<annotate::SampleRecord>& recs,
                                                const model::ModelConfig& mcfg) {
  std::vector<model::TrainingSample> samples;
  samples.reserve(recs.size());
  for (const auto& rec : recs) {
    if (rec.image_ref.empty() || !rec.has_ext || !rec.ext.has_norm ||
        rec.ext.norm_image_ref.empty()) {
      throw LabelMissing(
          "record lacks rasters or normalization data; run simulate then normalize");
    }
    const auto orig = image::read_pgm((dir / rec.image_ref).string());
    const auto norm = image::read_pgm((dir / rec.ext.norm_image_ref).string());
    samples.push_back(model::make_training_sample(rec, orig, norm, mcfg));
  }
  return samples;
}

void cmd_train(const Cli& cli) {
  const auto cfg = effective_config(cli);
  if (cli.in.empty()) throw ConfigError("train needs --in dataset directory");
  const fs::path in(cli.in);
  const auto records = annotate::load_records((in / "records.jsonl").string());
  if (records.empty()) throw EmptySet("dataset has no records");
  const auto mcfg = cfg.model_with_triplane();
  const auto samples = load_samples(in, records, mcfg);

  model::GazeModel net(mcfg, cfg.seed);
  auto tcfg = cfg.training;
  tcfg.seed = cfg.seed;
  const auto curve = model::fit(net, samples, tcfg);

  const fs::path out(cli.out);
  fs::create_directories(out);
  model::save_checkpoint((out / "checkpoint.json").string(), net);

  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : curve.epochs) {
    epochs.push_back({{"mean_loss", e.mean_loss},
                      {"mean_angular_error_deg", e.mean_angular_error_deg}});
  }
  nlohmann::json jc = {{"epochs", epochs},
                       {"final_mean_angular_error_deg", curve.final_mean_angular_error_deg}};
  write_text(out / "curve.json", jc.dump(2) + "\n");
  std::cout << jc.dump() << "\n";
}

void cmd_eval(const Cli& cli) {
  const auto cfg = effective_config(cli);
  if (cli.in.empty()) throw ConfigError("eval needs --in dataset directory");
  const fs::path in(cli.in);
  const auto records = annotate::load_records((in / "records.jsonl").string());
  if (records.empty()) throw EmptySet("dataset has no records");

  metrics::EvalReport rep;
  rep.n_samples = static_cast<int>(records.size());
  std::vector<double> errors;
  std::vector<geom::Vec3> true_dirs;
  std::vector<annotate::Zone> zone_truth, zone_fused, zone_pos, zone_visual;
  for (const auto& rec : records) {
    true_dirs.push_back(rec.gaze.direction);
    zone_truth.push_back(rec.zone);
  }

  if (!cli.predictions.empty()) {
    // Fixture path: externally supplied per-record predictions.
    std::ifstream pin(cli.predictions);
    if (!pin) throw IoError("cannot open " + cli.predictions);
    std::string line;
    size_t idx = 0;
    while (std::getline(pin, line)) {
      if (line.empty()) continue;
      if (idx >= records.size()) break;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw IoError("malformed prediction line");
      geom::Vec3 g;
      try {
        g = geom::Vec3(j.at("gaze").at(0).get<double>(), j.at("gaze").at(1).get<double>(),
                       j.at("gaze").at(2).get<double>());
        const auto z = annotate::zone_from_string(j.at("zone").get<std::string>());
        zone_fused.push_back(z);
        zone_pos.push_back(z);
        zone_visual.push_back(z);
      } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed prediction line: ") + e.what());
      }
      if (g.norm() <= 1e-12) throw NotUnit("prediction gaze has zero length");
      errors.push_back(metrics::angular_error_deg(g.normalized(), true_dirs[idx]));
      ++idx;
    }
    if (idx != records.size()) {
      throw LengthMismatch("prediction count does not match record count");
    }
  } else {
    if (cli.checkpoint.empty()) {
      throw ConfigError("eval needs --checkpoint (or --predictions)");
    }
    auto net = model::load_checkpoint(cli.checkpoint);
    const auto samples = load_samples(in, records, net.config());
    std::array<double, 4> lev_n{}, lev_o{};
    double fin_n = 0.0, fin_o = 0.0;
    int correct_fused = 0, correct_pos = 0, correct_visual = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      const auto res = net.forward(s);
      errors.push_back(metrics::angular_error_deg(res.gaze_o, true_dirs[i]));
      const geom::Vec3 target_n = annotate::vec_from_yawpitch(s.yaw_n, s.pitch_n);
      const geom::Vec3 target_o = annotate::vec_from_yawpitch(s.yaw_o, s.pitch_o);
      for (size_t l = 0; l < 4; ++l) {
        lev_n[l] += metrics::angular_error_deg(
            annotate::vec_from_yawpitch(res.pred_n.levels[l](0), res.pred_n.levels[l](1)),
            target_n);
        lev_o[l] += metrics::angular_error_deg(
            annotate::vec_from_yawpitch(res.pred_o.levels[l](0), res.pred_o.levels[l](1)),
            target_o);
      }
      fin_n += metrics::angular_error_deg(
          annotate::vec_from_yawpitch(res.pred_n.final(0), res.pred_n.final(1)), target_n);
      fin_o += metrics::angular_error_deg(
          annotate::vec_from_yawpitch(res.pred_o.final(0), res.pred_o.final(1)), target_o);

      auto argmax_zone = [](const Eigen::VectorXd& logits) {
        int best = 0;
        for (int k = 1; k < logits.size(); ++k) {
          if (logits(k) > logits(best)) best = k;
        }
        return annotate::all_zones()[static_cast<size_t>(best)];
      };
      const auto zf = argmax_zone(res.logits_zone);
      const auto zp = argmax_zone(res.logits_pos);
      const auto zv = argmax_zone(res.logits_visual);
      zone_fused.push_back(zf);
      zone_pos.push_back(zp);
      zone_visual.push_back(zv);
      if (zf == zone_truth[i]) ++correct_fused;
      if (zp == zone_truth[i]) ++correct_pos;
      if (zv == zone_truth[i]) ++correct_visual;
    }
    const double n = static_cast<double>(samples.size());
    for (size_t l = 0; l < 4; ++l) {
      rep.level_error_n[l] = lev_n[l] / n;
      rep.level_error_o[l] = lev_o[l] / n;
    }
    rep.final_error_n = fin_n / n;
    rep.final_error_o = fin_o / n;
    rep.zone_accuracy_fused = correct_fused / n;
    rep.zone_accuracy_pos = correct_pos / n;
    rep.zone_accuracy_visual = correct_visual / n;
  }

  double sum = 0.0;
  for (double e : errors) sum += e;
  rep.mean_angular_error_deg = errors.empty() ? 0.0 : sum / static_cast<double>(errors.size());
  for (double t : cfg.metrics.ap_thresholds_deg) {
    rep.ap.emplace_back(t, metrics::average_precision_at(errors, t));
  }
  rep.zones = metrics::zone_metrics(zone_fused, zone_truth);
  if (!cli.predictions.empty()) {
    rep.zone_accuracy_fused = rep.zones.accuracy;
    rep.zone_accuracy_pos = rep.zones.accuracy;
    rep.zone_accuracy_visual = rep.zones.accuracy;
  }
  rep.ranges = metrics::range_bins(true_dirs, errors, cfg.metrics.range_edges_deg);

  const fs::path out(cli.out);
  fs::create_directories(out);
  write_text(out / "report.json", metrics::report_to_json(rep));
  write_text(out / "report.svg", metrics::report_svg(rep));
  std::cout << metrics::report_table(rep);
}

void cmd_gradcheck(const Cli& cli) {
  const auto cfg = effective_config(cli);
  auto scene = synthcab::generate_cabin(cfg.seed, cfg.synth.layout);
  scene.dms_camera = cfg.front_camera;
  scene.depth_camera = cfg.back_camera;

  synthcab::SyntheticSubject subj;
  subj.subject_id = 0;
  subj.posture = annotate::Posture::Free;
  subj.position_radius = cfg.synth.position_radius;
  subj.head_yaw_range_deg = cfg.synth.head_yaw_range_deg;
  subj.head_pitch_range_deg = cfg.synth.head_pitch_range_deg;
  subj.seed = mix_seed(cfg.seed, 0x6C);
  auto rec = synthcab::sample_frames(scene, subj, 1).front();

  const auto crop = synthcab::face_crop_camera(rec, scene.dms_camera, cfg.model.image_size,
                                               cfg.synth.crop_fill);
  const auto original = synthcab::render_face(rec, crop, cfg.model.image_size);

  geom::Rotation head;
  const geom::Rotation* head_ptr = nullptr;
  if (cfg.normalization.method == normalize::Method::Legacy) {
    head = geom::Rotation::from_matrix(
        synthcab::head_rotation_from_forward(synthcab::head_forward_from_record(rec)));
    head_ptr = &head;
  }
  const auto res =
      normalize::normalize_geometry(rec.face_center, rec.gaze, crop, cfg.normalization,
                                    head_ptr);
  const auto normalized =
      normalize::warp_image(original, crop, res.virtual_camera, res.scale, res.rotation);
  rec.has_ext = true;
  rec.ext.has_norm = true;
  rec.ext.norm_rotation = res.rotation.matrix();
  rec.ext.gaze_normalized = res.gaze_normalized.direction;

  const auto mcfg = cfg.model_with_triplane();
  const auto sample = model::make_training_sample(rec, original, normalized, mcfg);
  const model::GazeModel net(mcfg, cfg.seed);
  const auto report = model::gradcheck(net, sample, cli.params, cfg.seed);

  const fs::path out(cli.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, model::gradcheck_report_json(report));
  std::cout << model::gradcheck_report_json(report);
}

void cmd_report(const Cli& cli) {
  if (cli.in.empty()) throw ConfigError("report needs --in report.json");
  const auto rep = metrics::report_from_json(read_text(cli.in));
  const fs::path out(cli.out);
  fs::create_directories(out);
  write_text(out / "report.svg", metrics::report_svg(rep));
  write_text(out / "report_table.txt", metrics::report_table(rep));
  std::cout << metrics::report_table(rep);
}

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  CLI::App app{"in-cabin gaze pipeline"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config_path, "pipeline config JSON");
    sub->add_option("--preset", cli.preset, "tiny or paper")
        ->check(CLI::IsMember({"tiny", "paper"}));
    sub->add_option("--out", cli.out, "output path");
    sub->add_option_function<uint64_t>(
        "--seed", [&](uint64_t v) {
          cli.seed = v;
          cli.seed_given = true;
        },
        "rng seed override");
    sub->callback([&cli, sub] { cli.cmd = sub->get_name(); });
    return sub;
  };

  add_common(app.add_subcommand("simulate", "emit synthetic scene + dataset"));
  auto* cal = add_common(app.add_subcommand("calibrate", "corner obs -> calibration JSON"));
  cal->add_option("--front", cli.front_obs, "front (DMS) corner observations JSONL");
  cal->add_option("--back", cli.back_obs, "back (depth) corner observations JSONL");
  auto* ann = add_common(app.add_subcommand("annotate", "scene -> labelled records"));
  ann->add_option("--in", cli.in, "scene JSON");
  auto* nor = add_common(app.add_subcommand("normalize", "warp dataset rasters"));
  nor->add_option("--in", cli.in, "dataset directory");
  auto* tr = add_common(app.add_subcommand("train", "fit the gaze model"));
  tr->add_option("--in", cli.in, "dataset directory");
  auto* ev = add_common(app.add_subcommand("eval", "checkpoint + dataset -> report"));
  ev->add_option("--in", cli.in, "dataset directory");
  ev->add_option("--checkpoint", cli.checkpoint, "checkpoint JSON path");
  ev->add_option("--predictions", cli.predictions, "fixture predictions JSONL");
  auto* gc = add_common(app.add_subcommand("gradcheck", "finite-difference gradient report"));
  gc->add_option("--params", cli.params, "sampled parameter count");
  auto* rp = add_common(app.add_subcommand("report", "eval JSON -> table + SVG"));
  rp->add_option("--in", cli.in, "EvalReport JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    nlohmann::json err = {{"error", std::string(e.what())}, {"code", 2}};
    std::cerr << err.dump() << "\n";
    return 2;
  }

  try {
    if (cli.cmd == "simulate") cmd_simulate(cli);
    else if (cli.cmd == "calibrate") cmd_calibrate(cli);
    else if (cli.cmd == "annotate") cmd_annotate(cli);
    else if (cli.cmd == "normalize") cmd_normalize(cli);
    else if (cli.cmd == "train") cmd_train(cli);
    else if (cli.cmd == "eval") cmd_eval(cli);
    else if (cli.cmd == "gradcheck") cmd_gradcheck(cli);
    else if (cli.cmd == "report") cmd_report(cli);
  } catch (const Error& e) {
    nlohmann::json err = {{"error", std::string(e.what())},
                          {"code", static_cast<int>(e.category())}};
    std::cerr << err.dump() << "\n";
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", std::string(e.what())}, {"code", 3}};
    std::cerr << err.dump() << "\n";
    return 3;
  }
  return 0;
}
