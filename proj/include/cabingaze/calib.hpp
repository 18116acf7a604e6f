#pragma once

#include <string>
#include <vector>

#include "cabingaze/geom.hpp"

namespace cabingaze::calib {

/// Physical chessboard: inner corner grid, square edge length, substrate thickness.
/// mirror_mode selects the alternative back-face axis convention for cameras
/// that capture mirrored images.
struct BoardSpec {
  int rows = 6;
  int cols = 9;
  double square_size = 0.05;
  double thickness = 0.003;
  bool mirror_mode = false;

  void validate() const;

  /// Inner corner positions in the board frame, row-major, z = 0.
  /// Corner (r, c) sits at (c * square_size, r * square_size, 0).
  std::vector<geom::Vec3> grid() const;
};

/// One board-to-image correspondence: board point (meters, z = 0 implied)
/// and the observed pixel.
struct CornerObservation {
  geom::Vec2 board_xy = geom::Vec2::Zero();
  geom::Vec2 pixel = geom::Vec2::Zero();
};

using CornerObservations = std::vector<CornerObservation>;

/// JSONL, one {"board_xy":[x,y],"pixel":[u,v]} object per line.
void save_corner_observations(const std::string& path, const CornerObservations& obs);
CornerObservations load_corner_observations(const std::string& path);

/// Depth-camera -> DMS-camera extrinsics.
struct CrossCameraCalibration {
  geom::RigidTransform rot;
  double residual_px = 0.0;
};

/// {"R_rot": 3x3, "t_rot": [3], "residual_px": s}
void save_calibration(const std::string& path, const CrossCameraCalibration& calib);
CrossCameraCalibration load_calibration(const std::string& path);

struct PoseEstimateDiagnostics {
  std::vector<double> rmse_trace;  // reprojection RMSE at init and after each accepted step
  double final_rmse_px = 0.0;
  int iterations = 0;
};

/// Board-to-camera pose from planar correspondences.
///
/// Homography DLT with Hartley normalization, SVD decomposition picking the
/// solution that puts the board in front of the camera, then Gauss-Newton on
/// reprojection residuals (axis-angle increments, backtracking halving up to
/// 8 times, stop at step norm < 1e-12 or 50 iterations).
///
/// Throws DegenerateConfiguration for fewer than 4 points or collinear board
/// points; NoConvergence if refinement cannot hold the residual finite.
geom::RigidTransform estimate_planar_pose(const CornerObservations& obs,
                                          const geom::PinholeCamera& cam,
                                          PoseEstimateDiagnostics* diagnostics = nullptr);

/// Back-face board frame -> front-face board frame.
///
/// Front-face convention: x right, y down, z toward the observing camera.
/// Rotation is 180 degrees about the board x-axis, diag(1,-1,-1); translation
/// (0,0,-thickness). mirror_mode flips about y instead, diag(-1,1,-1).
geom::RigidTransform chessboard_flip_transform(const BoardSpec& spec);

/// Chain the two board poses through the flip transform:
///   R_rot = R_dms * R_flip * R_depth^-1
///   t_rot = -R_dms * R_flip * R_depth^-1 * t_depth + R_dms * t_flip + t_dms
/// where dms_pose and depth_pose map their board frames into camera frames.
CrossCameraCalibration compose_cross_camera(const geom::RigidTransform& dms_pose,
                                            const geom::RigidTransform& depth_pose,
                                            const geom::RigidTransform& flip);

/// p_dms = R_rot * p_depth + t_rot
geom::Vec3 transfer_point(const CrossCameraCalibration& calib, const geom::Vec3& p_depth);

}  // namespace cabingaze::calib
