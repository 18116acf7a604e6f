#include "cabingaze/config.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace cabingaze::config {

using nlohmann::json;

void TriplaneConfig::validate() const {
  if (bands < 1) throw ConfigError("triplane bands must be at least 1");
  if (!(scale > 0.0)) throw ConfigError("triplane scale must be positive");
}

void MetricsConfig::validate() const {
  if (ap_thresholds_deg.empty()) throw ConfigError("ap_thresholds_deg must not be empty");
  for (double t : ap_thresholds_deg) {
    if (!(t > 0.0)) throw ConfigError("ap thresholds must be positive");
  }
  if (range_edges_deg.size() < 2) throw ConfigError("range_edges_deg needs two edges");
  for (size_t i = 1; i < range_edges_deg.size(); ++i) {
    if (!(range_edges_deg[i] > range_edges_deg[i - 1])) {
      throw ConfigError("range_edges_deg must be strictly increasing");
    }
  }
}

void SynthConfig::validate() const {
  layout.validate();
  if (subjects < 1) throw ConfigError("subjects must be at least 1");
  if (frames_per_subject < 1) throw ConfigError("frames_per_subject must be at least 1");
  if (!(crop_fill > 0.0) || crop_fill >= 2.0) throw ConfigError("crop_fill out of range");
  if (chessboard_noise_px < 0.0) throw ConfigError("chessboard_noise_px must be >= 0");
  if (position_radius < 0.0) throw ConfigError("position_radius must be >= 0");
  if (head_yaw_range_deg < 0.0 || head_pitch_range_deg < 0.0) {
    throw ConfigError("head angle ranges must be >= 0");
  }
}

void PipelineConfig::validate() const {
  front_camera.validate();
  back_camera.validate();
  board.validate();
  normalization.validate();
  triplane.validate();
  model_with_triplane().validate();
  training.validate();
  metrics.validate();
  synth.validate();
  if (normalization.out_width != model.image_size ||
      normalization.out_height != model.image_size) {
    throw ConfigError("normalization output size must match model image_size");
  }
}

model::ModelConfig PipelineConfig::model_with_triplane() const {
  model::ModelConfig m = model;
  m.triplane_bands = triplane.bands;
  m.triplane_scale = triplane.scale;
  m.triplane_forward_only = triplane.forward_only;
  return m;
}

PipelineConfig default_config() {
  PipelineConfig cfg;
  // Board matches the synthetic layout so simulate -> calibrate is coherent.
  cfg.board.rows = cfg.synth.layout.board_rows;
  cfg.board.cols = cfg.synth.layout.board_cols;
  cfg.board.square_size = cfg.synth.layout.board_square;
  cfg.board.thickness = cfg.synth.layout.board_thickness;
  apply_preset(cfg, "tiny");
  return cfg;
}

void apply_preset(PipelineConfig& cfg, const std::string& preset) {
  if (preset == "tiny") {
    cfg.model = model::ModelConfig::tiny();
    cfg.normalization.out_width = 32;
    cfg.normalization.out_height = 32;
    cfg.normalization.virtual_fx = 66.0;
    cfg.normalization.virtual_fy = 66.0;
    cfg.training = model::TrainingConfig{};
  } else if (preset == "paper") {
    cfg.model = model::ModelConfig::paper();
    cfg.normalization.out_width = 224;
    cfg.normalization.out_height = 224;
    cfg.normalization.virtual_fx = 960.0;
    cfg.normalization.virtual_fy = 960.0;
    cfg.training = model::TrainingConfig{};
    cfg.training.lr = 0.01;
  } else {
    throw ConfigError("unknown preset '" + preset + "' (expected tiny or paper)");
  }
}

namespace {

void require_object(const json& j, const std::string& name) {
  if (!j.is_object()) throw ConfigError("section '" + name + "' must be a JSON object");
}

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
  require_object(j, section);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) {
      return it.key() == k;
    });
    if (!known) {
      throw ConfigError("unknown key '" + it.key() + "' in section '" + section + "'");
    }
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void merge_camera(const json& j, const std::string& name, geom::PinholeCamera& cam) {
  check_keys(j, name, {"fx", "fy", "cx", "cy", "width", "height"});
  get_if(j, "fx", cam.fx);
  get_if(j, "fy", cam.fy);
  get_if(j, "cx", cam.cx);
  get_if(j, "cy", cam.cy);
  get_if(j, "width", cam.width);
  get_if(j, "height", cam.height);
}

void merge_vec3(const json& j, const std::string& name, geom::Vec3& v) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError("'" + name + "' must be an array of 3 numbers");
  }
  v = geom::Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

json vec3_json(const geom::Vec3& v) { return {v.x(), v.y(), v.z()}; }

void merge_sections(PipelineConfig& cfg, const json& j) {
  check_keys(j, "top level",
             {"seed", "cameras", "calibration", "normalization", "triplane", "model",
              "training", "metrics", "synth"});
  get_if(j, "seed", cfg.seed);

  if (j.contains("cameras")) {
    const auto& c = j.at("cameras");
    check_keys(c, "cameras", {"front", "back"});
    if (c.contains("front")) merge_camera(c.at("front"), "cameras.front", cfg.front_camera);
    if (c.contains("back")) merge_camera(c.at("back"), "cameras.back", cfg.back_camera);
  }

  if (j.contains("calibration")) {
    const auto& c = j.at("calibration");
    check_keys(c, "calibration", {"board"});
    if (c.contains("board")) {
      const auto& b = c.at("board");
      check_keys(b, "calibration.board",
                 {"rows", "cols", "square_size", "thickness", "mirror_mode"});
      get_if(b, "rows", cfg.board.rows);
      get_if(b, "cols", cfg.board.cols);
      get_if(b, "square_size", cfg.board.square_size);
      get_if(b, "thickness", cfg.board.thickness);
      get_if(b, "mirror_mode", cfg.board.mirror_mode);
    }
  }

  if (j.contains("normalization")) {
    const auto& n = j.at("normalization");
    check_keys(n, "normalization",
               {"d_norm", "virtual_fx", "virtual_fy", "out_width", "out_height", "method"});
    get_if(n, "d_norm", cfg.normalization.d_norm);
    get_if(n, "virtual_fx", cfg.normalization.virtual_fx);
    get_if(n, "virtual_fy", cfg.normalization.virtual_fy);
    get_if(n, "out_width", cfg.normalization.out_width);
    get_if(n, "out_height", cfg.normalization.out_height);
    if (n.contains("method")) {
      cfg.normalization.method =
          normalize::method_from_string(n.at("method").get<std::string>());
    }
  }

  if (j.contains("triplane")) {
    const auto& t = j.at("triplane");
    check_keys(t, "triplane", {"bands", "scale", "forward_only"});
    get_if(t, "bands", cfg.triplane.bands);
    get_if(t, "scale", cfg.triplane.scale);
    get_if(t, "forward_only", cfg.triplane.forward_only);
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, "model",
               {"image_size", "width", "heads", "stream_layers", "fusion_layers",
                "positional_layers", "zone_fusion_layers", "ff_mult", "head_hidden",
                "pose_bands", "pose_scale"});
    get_if(m, "image_size", cfg.model.image_size);
    get_if(m, "width", cfg.model.width);
    get_if(m, "heads", cfg.model.heads);
    get_if(m, "stream_layers", cfg.model.stream_layers);
    get_if(m, "fusion_layers", cfg.model.fusion_layers);
    get_if(m, "positional_layers", cfg.model.positional_layers);
    get_if(m, "zone_fusion_layers", cfg.model.zone_fusion_layers);
    get_if(m, "ff_mult", cfg.model.ff_mult);
    get_if(m, "head_hidden", cfg.model.head_hidden);
    get_if(m, "pose_bands", cfg.model.pose_bands);
    get_if(m, "pose_scale", cfg.model.pose_scale);
  }

  if (j.contains("training")) {
    const auto& t = j.at("training");
    check_keys(t, "training",
               {"lr", "momentum", "epochs", "batch_size", "l2_weight", "clip_norm"});
    get_if(t, "lr", cfg.training.lr);
    get_if(t, "momentum", cfg.training.momentum);
    get_if(t, "epochs", cfg.training.epochs);
    get_if(t, "batch_size", cfg.training.batch_size);
    get_if(t, "l2_weight", cfg.training.l2_weight);
    get_if(t, "clip_norm", cfg.training.clip_norm);
  }

  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    check_keys(m, "metrics", {"ap_thresholds_deg", "range_edges_deg"});
    get_if(m, "ap_thresholds_deg", cfg.metrics.ap_thresholds_deg);
    get_if(m, "range_edges_deg", cfg.metrics.range_edges_deg);
  }

  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    check_keys(s, "synth",
               {"layout", "subjects", "frames_per_subject", "crop_fill",
                "chessboard_noise_px", "position_radius", "head_yaw_range_deg",
                "head_pitch_range_deg"});
    if (s.contains("layout")) {
      const auto& l = s.at("layout");
      check_keys(l, "synth.layout",
                 {"cabin_min", "cabin_max", "targets_per_zone", "target_jitter",
                  "board_rows", "board_cols", "board_square", "board_thickness"});
      if (l.contains("cabin_min")) {
        merge_vec3(l.at("cabin_min"), "synth.layout.cabin_min", cfg.synth.layout.cabin_min);
      }
      if (l.contains("cabin_max")) {
        merge_vec3(l.at("cabin_max"), "synth.layout.cabin_max", cfg.synth.layout.cabin_max);
      }
      get_if(l, "targets_per_zone", cfg.synth.layout.targets_per_zone);
      get_if(l, "target_jitter", cfg.synth.layout.target_jitter);
      get_if(l, "board_rows", cfg.synth.layout.board_rows);
      get_if(l, "board_cols", cfg.synth.layout.board_cols);
      get_if(l, "board_square", cfg.synth.layout.board_square);
      get_if(l, "board_thickness", cfg.synth.layout.board_thickness);
    }
    get_if(s, "subjects", cfg.synth.subjects);
    get_if(s, "frames_per_subject", cfg.synth.frames_per_subject);
    get_if(s, "crop_fill", cfg.synth.crop_fill);
    get_if(s, "chessboard_noise_px", cfg.synth.chessboard_noise_px);
    get_if(s, "position_radius", cfg.synth.position_radius);
    get_if(s, "head_yaw_range_deg", cfg.synth.head_yaw_range_deg);
    get_if(s, "head_pitch_range_deg", cfg.synth.head_pitch_range_deg);
  }
}

}  // namespace

void merge_config_text(PipelineConfig& cfg, const std::string& json_text) {
  json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  try {
    merge_sections(cfg, j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
}

void merge_config_file(PipelineConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  merge_config_text(cfg, text);
}

std::string serialize_config(const PipelineConfig& cfg) {
  const auto camera = [](const geom::PinholeCamera& c) {
    return json{{"fx", c.fx},       {"fy", c.fy},       {"cx", c.cx},
                {"cy", c.cy},       {"width", c.width}, {"height", c.height}};
  };
  json j = {
      {"seed", cfg.seed},
      {"cameras", {{"front", camera(cfg.front_camera)}, {"back", camera(cfg.back_camera)}}},
      {"calibration",
       {{"board",
         {{"rows", cfg.board.rows},
          {"cols", cfg.board.cols},
          {"square_size", cfg.board.square_size},
          {"thickness", cfg.board.thickness},
          {"mirror_mode", cfg.board.mirror_mode}}}}},
      {"normalization",
       {{"d_norm", cfg.normalization.d_norm},
        {"virtual_fx", cfg.normalization.virtual_fx},
        {"virtual_fy", cfg.normalization.virtual_fy},
        {"out_width", cfg.normalization.out_width},
        {"out_height", cfg.normalization.out_height},
        {"method", normalize::method_to_string(cfg.normalization.method)}}},
      {"triplane",
       {{"bands", cfg.triplane.bands},
        {"scale", cfg.triplane.scale},
        {"forward_only", cfg.triplane.forward_only}}},
      {"model",
       {{"image_size", cfg.model.image_size},
        {"width", cfg.model.width},
        {"heads", cfg.model.heads},
        {"stream_layers", cfg.model.stream_layers},
        {"fusion_layers", cfg.model.fusion_layers},
        {"positional_layers", cfg.model.positional_layers},
        {"zone_fusion_layers", cfg.model.zone_fusion_layers},
        {"ff_mult", cfg.model.ff_mult},
        {"head_hidden", cfg.model.head_hidden},
        {"pose_bands", cfg.model.pose_bands},
        {"pose_scale", cfg.model.pose_scale}}},
      {"training",
       {{"lr", cfg.training.lr},
        {"momentum", cfg.training.momentum},
        {"epochs", cfg.training.epochs},
        {"batch_size", cfg.training.batch_size},
        {"l2_weight", cfg.training.l2_weight},
        {"clip_norm", cfg.training.clip_norm}}},
      {"metrics",
       {{"ap_thresholds_deg", cfg.metrics.ap_thresholds_deg},
        {"range_edges_deg", cfg.metrics.range_edges_deg}}},
      {"synth",
       {{"layout",
         {{"cabin_min", vec3_json(cfg.synth.layout.cabin_min)},
          {"cabin_max", vec3_json(cfg.synth.layout.cabin_max)},
          {"targets_per_zone", cfg.synth.layout.targets_per_zone},
          {"target_jitter", cfg.synth.layout.target_jitter},
          {"board_rows", cfg.synth.layout.board_rows},
          {"board_cols", cfg.synth.layout.board_cols},
          {"board_square", cfg.synth.layout.board_square},
          {"board_thickness", cfg.synth.layout.board_thickness}}},
        {"subjects", cfg.synth.subjects},
        {"frames_per_subject", cfg.synth.frames_per_subject},
        {"crop_fill", cfg.synth.crop_fill},
        {"chessboard_noise_px", cfg.synth.chessboard_noise_px},
        {"position_radius", cfg.synth.position_radius},
        {"head_yaw_range_deg", cfg.synth.head_yaw_range_deg},
        {"head_pitch_range_deg", cfg.synth.head_pitch_range_deg}}}};
  return j.dump(2) + "\n";
}

}  // namespace cabingaze::config
