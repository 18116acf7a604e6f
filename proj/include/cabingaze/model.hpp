#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "cabingaze/annotate.hpp"
#include "cabingaze/errors.hpp"
#include "cabingaze/geom.hpp"
#include "cabingaze/image.hpp"
#include "cabingaze/triplane.hpp"

namespace cabingaze::model {

struct ModelConfig {
  int image_size = 32;  // square input; must be divisible by 32 (pyramid strides)
  int width = 32;       // token width d
  int heads = 2;
  int stream_layers = 2;
  int fusion_layers = 2;
  int positional_layers = 2;
  int zone_fusion_layers = 2;
  int ff_mult = 2;
  int head_hidden = 32;
  int triplane_bands = 8;
  double triplane_scale = 2.0;
  bool triplane_forward_only = false;
  int pose_bands = 4;
  double pose_scale = 1.0;

  void validate() const;
  static ModelConfig tiny();
  static ModelConfig paper();  // full-scale dims as recorded configuration

  int plane_token_dim() const { return 3 * 2 * triplane_bands + 1; }
  int pose_dim() const { return 3 * 2 * pose_bands; }
};

// Flat parameter vector bookkeeping: every tensor is a named slice.
struct ParamLayout {
  struct Entry {
    std::string name;
    int offset = 0;
    int rows = 0;
    int cols = 0;  // 1 for vectors
    int fan_in = 0;
    enum class Init { UniformFanIn, Token, One, Zero } init = Init::Zero;
  };
  std::vector<Entry> entries;
  std::unordered_map<std::string, int> by_name;
  int total = 0;

  int add(const std::string& name, int rows, int cols, Entry::Init init, int fan_in);
  int id(const std::string& name) const;  // throws BadLayout
  const Entry& entry(int idx) const { return entries[static_cast<size_t>(idx)]; }
};

struct TrainingSample {
  Eigen::VectorXd image_original;    // row-major pixels, centered + gain (see make_training_sample)
  Eigen::VectorXd image_normalized;
  geom::Mat3 norm_rotation = geom::Mat3::Identity();
  geom::Vec3 face_center = geom::Vec3(0.0, 0.0, 0.6);
  double yaw_o = 0.0, pitch_o = 0.0;  // original-space target, degrees
  double yaw_n = 0.0, pitch_n = 0.0;  // normalized-space target, degrees
  int zone = annotate::kZoneCount - 1;
};

TrainingSample make_training_sample(const annotate::SampleRecord& rec,
                                    const image::ImageGray& original,
                                    const image::ImageGray& normalized,
                                    const ModelConfig& cfg);

struct StreamPredictions {
  std::array<Eigen::Vector2d, 4> levels;  // (yaw, pitch) degrees, stream space
  Eigen::Vector2d final = Eigen::Vector2d::Zero();
};

struct ForwardCache;  // internal activations, defined in model.cpp

struct ForwardResult {
  StreamPredictions pred_n, pred_o;
  Eigen::Vector2d pred_fused = Eigen::Vector2d::Zero();  // normalized space
  geom::Vec3 gaze_n = geom::Vec3(0.0, 0.0, -1.0);        // unit, normalized space
  geom::Vec3 gaze_o = geom::Vec3(0.0, 0.0, -1.0);        // unit, original space
  triplane::TriPlaneHit hits;
  Eigen::VectorXd logits_pos, logits_visual, logits_zone;
  std::shared_ptr<ForwardCache> cache;
};

struct LossMask {
  double l1 = 1.0;
  double l2 = 1.0;
};

struct LossBreakdown {
  std::array<double, 4> level_n{}, level_o{};
  double final_n = 0.0, final_o = 0.0, fused = 0.0;
  double ce_pos = 0.0, ce_visual = 0.0, ce_zone = 0.0;

  double l1_sum() const;
  double l2_sum() const;
  double total(const LossMask& mask = {}) const;
};

class GazeModel {
 public:
  GazeModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  uint64_t seed() const { return seed_; }

  // Per-level pooled projections of one image (strides 4/8/16/32).
  std::array<Eigen::VectorXd, 4> pyramid_features(const Eigen::VectorXd& image,
                                                  bool normalized_stream) const;

  // Full output sequence of one stream transformer over the given level
  // features: token rows first (1 for the normalized stream, 2 for the
  // original), then the four feature rows.
  Eigen::MatrixXd stream_aggregate(const std::array<Eigen::VectorXd, 4>& features,
                                   bool normalized_stream) const;

  // Mean-pooled fusion feature from the two stream tokens, each offset by its
  // camera-pose encoding.
  Eigen::VectorXd fuse_dual_stream(const Eigen::VectorXd& f_n_final,
                                   const Eigen::VectorXd& f_o_final,
                                   const geom::Vec3& pose_z_n,
                                   const geom::Vec3& pose_z_o) const;

  // frozen_hits substitutes the tri-plane intersections instead of deriving
  // them from the fused prediction — the finite-difference oracle for the
  // stop-gradient semantics.
  ForwardResult forward(const TrainingSample& sample,
                        const triplane::TriPlaneHit* frozen_hits = nullptr) const;

  LossBreakdown loss_breakdown(const ForwardResult& result,
                               const TrainingSample& sample) const;

  Eigen::VectorXd backward(const ForwardResult& result, const TrainingSample& sample,
                           const LossMask& mask = {}) const;

  // Parameter ids whose only route to the loss crosses the tri-plane
  // stop-gradient when the gaze (L1) terms are masked out.
  std::vector<int> stopped_entry_ids() const;

 private:
  struct LinearIds {
    int w = -1, b = -1;
  };
  struct LayerIds {
    int ln1_g = -1, ln1_b = -1;
    LinearIds q, k, v, o;
    int ln2_g = -1, ln2_b = -1;
    LinearIds ff1, ff2;
  };
  struct HeadIds {
    LinearIds l1, l2;
  };
  struct Ids {
    std::array<LinearIds, 4> proj_n, proj_o;
    int tok_n = -1, tok_o = -1;
    std::vector<LayerIds> stream_n, stream_o, fusion, positional, zone_fusion;
    LinearIds pose;
    std::array<LinearIds, 3> plane;
    std::array<HeadIds, 4> head_level_n, head_level_o;
    HeadIds head_final_n, head_final_o, head_fused;
    HeadIds head_zone_pos, head_zone_visual, head_zone_fused;
  };

  void register_params();
  void init_params();

  ModelConfig cfg_;
  uint64_t seed_;
  ParamLayout layout_;
  Ids ids_;
  Eigen::VectorXd params_;

  friend struct ModelAccess;  // internal helper in model.cpp
};

struct TrainingConfig {
  double lr = 0.012;
  double momentum = 0.9;
  int epochs = 10;
  int batch_size = 16;
  double l2_weight = 1.0;
  double clip_norm = 10.0;  // global-norm gradient cap; 0 disables
  uint64_t seed = 1;

  void validate() const;
};

struct EpochStats {
  double mean_loss = 0.0;
  double mean_angular_error_deg = 0.0;  // fused prediction, original space
};

struct TrainingCurve {
  std::vector<EpochStats> epochs;
  double final_mean_angular_error_deg = 0.0;  // full pass after training
};

TrainingCurve fit(GazeModel& model, const std::vector<TrainingSample>& dataset,
                  const TrainingConfig& cfg);

void save_checkpoint(const std::string& json_path, const GazeModel& model);
GazeModel load_checkpoint(const std::string& json_path);

struct GradCheckReport {
  int params_checked = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  double max_stopped_abs = 0.0;     // analytic grads of stopped params, L2-only mask
  double unfrozen_fd_abs = 0.0;     // |FD| through the unfrozen blocked path
  bool stop_grad_exact = false;
};

GradCheckReport gradcheck(const GazeModel& model, const TrainingSample& sample,
                          int n_params, uint64_t seed);

std::string gradcheck_report_json(const GradCheckReport& report);

}  // namespace cabingaze::model
