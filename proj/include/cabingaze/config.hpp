#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cabingaze/calib.hpp"
#include "cabingaze/errors.hpp"
#include "cabingaze/geom.hpp"
#include "cabingaze/model.hpp"
#include "cabingaze/normalize.hpp"
#include "cabingaze/synthcab.hpp"
#include "cabingaze/triplane.hpp"

namespace cabingaze::config {

struct TriplaneConfig {
  int bands = triplane::kDefaultBands;
  double scale = triplane::kDefaultScale;
  bool forward_only = false;

  void validate() const;
};

struct MetricsConfig {
  std::vector<double> ap_thresholds_deg = {2.0, 4.0, 6.0, 8.0};
  std::vector<double> range_edges_deg = {0.0, 20.0, 40.0, 60.0, 90.0};

  void validate() const;
};

struct SynthConfig {
  synthcab::LayoutConfig layout;
  int subjects = 4;
  int frames_per_subject = 36;
  double crop_fill = 0.62;
  double chessboard_noise_px = 0.0;
  double position_radius = 0.05;
  double head_yaw_range_deg = 25.0;
  double head_pitch_range_deg = 15.0;

  void validate() const;
};

// One file drives the whole pipeline; every section revalidates its module's
// preconditions on load, and unknown keys are rejected.
struct PipelineConfig {
  uint64_t seed = 1;
  geom::PinholeCamera front_camera{600.0, 600.0, 320.0, 240.0, 640, 480};  // DMS
  geom::PinholeCamera back_camera{580.0, 580.0, 320.0, 240.0, 640, 480};   // depth
  calib::BoardSpec board;
  normalize::NormalizationConfig normalization;
  TriplaneConfig triplane;
  model::ModelConfig model;
  model::TrainingConfig training;
  MetricsConfig metrics;
  SynthConfig synth;

  void validate() const;

  // Model config with the triplane section folded into its encoder fields.
  model::ModelConfig model_with_triplane() const;
};

// Tiny preset applied over module defaults: 32x32 rasters and the small model.
PipelineConfig default_config();

// "tiny" or "paper"; throws ConfigError otherwise.
void apply_preset(PipelineConfig& cfg, const std::string& preset);

// Merge a JSON document over cfg. Only present keys change; unknown keys or
// wrong types throw ConfigError.
void merge_config_text(PipelineConfig& cfg, const std::string& json_text);
void merge_config_file(PipelineConfig& cfg, const std::string& path);

std::string serialize_config(const PipelineConfig& cfg);

}  // namespace cabingaze::config
