#include "cabingaze/calib.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace cabingaze::calib {

using geom::Mat3;
using geom::Vec2;
using geom::Vec3;

void BoardSpec::validate() const {
  if (rows < 3 || cols < 3) {
    throw ConfigError("board needs at least 3x3 inner corners");
  }
  if (!(square_size > 0.0)) {
    throw ConfigError("board square size must be positive");
  }
  if (thickness < 0.0) {
    throw ConfigError("board thickness must be non-negative");
  }
}

std::vector<Vec3> BoardSpec::grid() const {
  validate();
  std::vector<Vec3> pts;
  pts.reserve(static_cast<size_t>(rows) * static_cast<size_t>(cols));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      pts.emplace_back(c * square_size, r * square_size, 0.0);
    }
  }
  return pts;
}

void save_corner_observations(const std::string& path, const CornerObservations& obs) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  for (const auto& o : obs) {
    nlohmann::json j;
    j["board_xy"] = {o.board_xy.x(), o.board_xy.y()};
    j["pixel"] = {o.pixel.x(), o.pixel.y()};
    out << j.dump() << "\n";
  }
}

CornerObservations load_corner_observations(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  CornerObservations obs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("board_xy") || !j.contains("pixel")) {
      throw IoError("malformed corner observation line in " + path);
    }
    CornerObservation o;
    o.board_xy = Vec2(j["board_xy"][0].get<double>(), j["board_xy"][1].get<double>());
    o.pixel = Vec2(j["pixel"][0].get<double>(), j["pixel"][1].get<double>());
    obs.push_back(o);
  }
  return obs;
}

void save_calibration(const std::string& path, const CrossCameraCalibration& calib) {
  nlohmann::json j;
  const Mat3& r = calib.rot.rotation.matrix();
  j["R_rot"] = {{r(0, 0), r(0, 1), r(0, 2)},
                {r(1, 0), r(1, 1), r(1, 2)},
                {r(2, 0), r(2, 1), r(2, 2)}};
  j["t_rot"] = {calib.rot.translation.x(), calib.rot.translation.y(),
                calib.rot.translation.z()};
  j["residual_px"] = calib.residual_px;
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  out << j.dump(2) << "\n";
}

CrossCameraCalibration load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("R_rot") || !j.contains("t_rot")) {
    throw IoError("malformed calibration file " + path);
  }
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) {
      r(i, k) = j["R_rot"][i][k].get<double>();
    }
  }
  CrossCameraCalibration calib;
  calib.rot.rotation = geom::Rotation::from_matrix(r);
  calib.rot.translation = Vec3(j["t_rot"][0].get<double>(), j["t_rot"][1].get<double>(),
                               j["t_rot"][2].get<double>());
  calib.residual_px = j.value("residual_px", 0.0);
  return calib;
}

namespace {

struct Normalization {
  Mat3 transform;
  std::vector<Vec2> points;
};

// Hartley normalization: centroid to origin, mean distance sqrt(2).
Normalization normalize_points(const std::vector<Vec2>& pts) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());

  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  if (mean_dist <= 1e-15) {
    throw DegenerateConfiguration("all points coincide");
  }
  const double s = std::sqrt(2.0) / mean_dist;

  Normalization n;
  n.transform << s, 0.0, -s * centroid.x(),
                 0.0, s, -s * centroid.y(),
                 0.0, 0.0, 1.0;
  n.points.reserve(pts.size());
  for (const auto& p : pts) {
    n.points.emplace_back(s * (p.x() - centroid.x()), s * (p.y() - centroid.y()));
  }
  return n;
}

void check_not_collinear(const std::vector<Vec2>& pts) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) {
    const Vec2 d = p - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const double lo = eig.eigenvalues()(0);
  const double hi = eig.eigenvalues()(1);
  if (lo <= hi * 1e-12 || hi <= 0.0) {
    throw DegenerateConfiguration("board points are collinear");
  }
}

// DLT homography board_xy -> pixel, both sets Hartley-normalized.
Mat3 dlt_homography(const CornerObservations& obs) {
  std::vector<Vec2> src, dst;
  src.reserve(obs.size());
  dst.reserve(obs.size());
  for (const auto& o : obs) {
    src.push_back(o.board_xy);
    dst.push_back(o.pixel);
  }
  const Normalization ns = normalize_points(src);
  const Normalization nd = normalize_points(dst);

  const int n = static_cast<int>(obs.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const double x = ns.points[static_cast<size_t>(i)].x();
    const double y = ns.points[static_cast<size_t>(i)].y();
    const double u = nd.points[static_cast<size_t>(i)].x();
    const double v = nd.points[static_cast<size_t>(i)].y();
    a.row(2 * i) << x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u;
    a.row(2 * i + 1) << 0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(7) <= sv(0) * 1e-10) {
    throw DegenerateConfiguration("rank-deficient DLT system");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h(0), h(1), h(2),
        h(3), h(4), h(5),
        h(6), h(7), h(8);
  return nd.transform.inverse() * hn * ns.transform;
}

// Reprojection RMSE; +inf when any point falls behind the camera.
double reprojection_rmse(const Mat3& r, const Vec3& t, const CornerObservations& obs,
                         const geom::PinholeCamera& cam) {
  double sse = 0.0;
  for (const auto& o : obs) {
    const Vec3 p = r * Vec3(o.board_xy.x(), o.board_xy.y(), 0.0) + t;
    if (p.z() <= 1e-9) return std::numeric_limits<double>::infinity();
    const Vec2 proj(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
    sse += (proj - o.pixel).squaredNorm();
  }
  return std::sqrt(sse / static_cast<double>(obs.size()));
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

Mat3 exp_rotation(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return geom::Rotation::from_axis_angle(omega, angle).matrix();
}

}  // namespace

geom::RigidTransform estimate_planar_pose(const CornerObservations& obs,
                                          const geom::PinholeCamera& cam,
                                          PoseEstimateDiagnostics* diagnostics) {
  cam.validate();
  if (obs.size() < 4) {
    throw DegenerateConfiguration("need at least 4 correspondences, got " +
                                  std::to_string(obs.size()));
  }
  {
    std::vector<Vec2> board;
    board.reserve(obs.size());
    for (const auto& o : obs) board.push_back(o.board_xy);
    check_not_collinear(board);
  }

  const Mat3 h = dlt_homography(obs);
  const Mat3 m = cam.inverse_matrix() * h;
  const Vec3 c1 = m.col(0);
  const Vec3 c2 = m.col(1);
  const Vec3 c3 = m.col(2);
  double lambda = 2.0 / (c1.norm() + c2.norm());

  // Board centroid depth decides the sign: the board must sit in front of the camera.
  Vec2 board_centroid = Vec2::Zero();
  for (const auto& o : obs) board_centroid += o.board_xy;
  board_centroid /= static_cast<double>(obs.size());
  const double z_center =
      lambda * (c1.z() * board_centroid.x() + c2.z() * board_centroid.y() + c3.z());
  if (z_center < 0.0) lambda = -lambda;
  if (z_center == 0.0) {
    throw DegenerateConfiguration("board centroid lies in the camera plane");
  }

  Mat3 r_cols;
  r_cols.col(0) = lambda * c1;
  r_cols.col(1) = lambda * c2;
  r_cols.col(2) = (lambda * c1).cross(lambda * c2);
  Mat3 r = geom::Rotation::closest(r_cols).matrix();
  Vec3 t = lambda * c3;

  // Gauss-Newton with backtracking on reprojection residuals.
  double rmse = reprojection_rmse(r, t, obs, cam);
  const double initial_rmse = rmse;
  if (diagnostics) {
    diagnostics->rmse_trace.clear();
    diagnostics->rmse_trace.push_back(rmse);
  }
  int iterations = 0;
  for (int iter = 0; iter < 50 && std::isfinite(rmse); ++iter) {
    const int n = static_cast<int>(obs.size());
    Eigen::MatrixXd jac(2 * n, 6);
    Eigen::VectorXd res(2 * n);
    for (int i = 0; i < n; ++i) {
      const auto& o = obs[static_cast<size_t>(i)];
      const Vec3 rp = r * Vec3(o.board_xy.x(), o.board_xy.y(), 0.0);
      const Vec3 p = rp + t;
      const double z = p.z();
      const Vec2 proj(cam.fx * p.x() / z + cam.cx, cam.fy * p.y() / z + cam.cy);
      res(2 * i) = proj.x() - o.pixel.x();
      res(2 * i + 1) = proj.y() - o.pixel.y();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << cam.fx / z, 0.0, -cam.fx * p.x() / (z * z),
               0.0, cam.fy / z, -cam.fy * p.y() / (z * z);
      Eigen::Matrix<double, 2, 6> ji;
      ji.block<2, 3>(0, 0) = dproj * (-skew(rp));
      ji.block<2, 3>(0, 3) = dproj;
      jac.block<2, 6>(2 * i, 0) = ji;
    }
    const Eigen::Matrix<double, 6, 6> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 6, 1> jtr = jac.transpose() * res;
    const Eigen::Matrix<double, 6, 1> delta = jtj.ldlt().solve(-jtr);
    if (!delta.allFinite()) break;

    double alpha = 1.0;
    bool accepted = false;
    Mat3 r_next;
    Vec3 t_next;
    double rmse_next = rmse;
    for (int bt = 0; bt <= 8; ++bt) {
      const Mat3 r_try = exp_rotation(alpha * delta.head<3>()) * r;
      const Vec3 t_try = t + alpha * delta.tail<3>();
      const double rmse_try = reprojection_rmse(r_try, t_try, obs, cam);
      if (rmse_try <= rmse) {
        r_next = r_try;
        t_next = t_try;
        rmse_next = rmse_try;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;

    const double step_norm = alpha * delta.norm();
    r = r_next;
    t = t_next;
    rmse = rmse_next;
    ++iterations;
    if (diagnostics) diagnostics->rmse_trace.push_back(rmse);
    if (step_norm < 1e-12) break;
  }

  if (!std::isfinite(rmse) || rmse > initial_rmse + 1e-12) {
    throw NoConvergence("refinement failed to reduce the reprojection residual");
  }
  if (diagnostics) {
    diagnostics->final_rmse_px = rmse;
    diagnostics->iterations = iterations;
  }

  geom::RigidTransform pose;
  pose.rotation = geom::Rotation::closest(r);
  pose.translation = t;
  return pose;
}

geom::RigidTransform chessboard_flip_transform(const BoardSpec& spec) {
  spec.validate();
  Mat3 r = Mat3::Identity();
  if (spec.mirror_mode) {
    r.diagonal() << -1.0, 1.0, -1.0;
  } else {
    r.diagonal() << 1.0, -1.0, -1.0;
  }
  geom::RigidTransform flip;
  flip.rotation = geom::Rotation::from_matrix(r);
  flip.translation = Vec3(0.0, 0.0, -spec.thickness);
  return flip;
}

CrossCameraCalibration compose_cross_camera(const geom::RigidTransform& dms_pose,
                                            const geom::RigidTransform& depth_pose,
                                            const geom::RigidTransform& flip) {
  const Mat3& r_dms = dms_pose.rotation.matrix();
  const Mat3& r_flip = flip.rotation.matrix();
  const Mat3 r_depth_inv = depth_pose.rotation.matrix().transpose();

  const Mat3 r_rot = r_dms * r_flip * r_depth_inv;
  const Vec3 t_rot = -r_rot * depth_pose.translation + r_dms * flip.translation +
                     dms_pose.translation;

  CrossCameraCalibration out;
  out.rot.rotation = geom::Rotation::from_matrix(r_rot);
  out.rot.translation = t_rot;
  return out;
}

Vec3 transfer_point(const CrossCameraCalibration& calib, const Vec3& p_depth) {
  return calib.rot.apply(p_depth);
}

}  // namespace cabingaze::calib
