#pragma once

// Shared test utilities: seeded random geometry, blob localization on
// renders, subprocess driving for the CLI binary, and small file helpers.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "cabingaze/geom.hpp"
#include "cabingaze/image.hpp"

#ifdef __unix__
#include <sys/wait.h>
#endif

namespace testutil {

inline cabingaze::geom::Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  cabingaze::geom::Vec3 v;
  do {
    v = cabingaze::geom::Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

inline cabingaze::geom::Rotation random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ang(-cabingaze::geom::kPi,
                                             cabingaze::geom::kPi);
  return cabingaze::geom::Rotation::from_axis_angle(random_unit(rng), ang(rng));
}

inline cabingaze::geom::Vec3 random_point(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> u(-extent, extent);
  return cabingaze::geom::Vec3(u(rng), u(rng), u(rng));
}

// Quaternion-based relative angle, well conditioned at both ends of [0, pi].
inline double quat_geodesic_deg(const cabingaze::geom::Rotation& a,
                                const cabingaze::geom::Rotation& b) {
  const Eigen::Quaterniond qa(a.matrix());
  const Eigen::Quaterniond qb(b.matrix());
  const Eigen::Quaterniond rel = qa.conjugate() * qb;
  const double angle = 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
  return cabingaze::geom::rad_to_deg(angle);
}

// Intensity-weighted centroid of the near-max region. The render's blob apex
// is the only structure within 10 counts of the maximum, so this localizes
// the blob even after a projective warp (which shifts wide-Gaussian
// centroids but leaves the peak in place).
inline cabingaze::geom::Vec2 blob_peak(const cabingaze::image::ImageGray& img) {
  double maxv = 0.0;
  for (double v : img.data) maxv = std::max(maxv, v);
  const double thresh = maxv - 10.0;
  double wsum = 0.0, xsum = 0.0, ysum = 0.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double w = img.at(x, y) - thresh;
      if (w <= 0.0) continue;
      wsum += w;
      xsum += w * (x + 0.5);
      ysum += w * (y + 0.5);
    }
  }
  return cabingaze::geom::Vec2(xsum / wsum, ysum / wsum);
}

inline std::filesystem::path fresh_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() / ("cabingaze_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Relative path -> bytes for every regular file under root.
inline std::map<std::string, std::string> dir_contents(
    const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out[std::filesystem::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

#ifdef CABINGAZE_CLI_PATH
// Runs the pipeline binary; returns its exit code. Output is captured into
// the given files when paths are provided, else discarded.
inline int run_cli(const std::string& args,
                   const std::filesystem::path& stdout_file = {},
                   const std::filesystem::path& stderr_file = {}) {
  std::string cmd = std::string(CABINGAZE_CLI_PATH) + " " + args;
  cmd += stdout_file.empty() ? " > /dev/null" : " > " + stdout_file.string();
  cmd += stderr_file.empty() ? " 2> /dev/null" : " 2> " + stderr_file.string();
  const int status = std::system(cmd.c_str());
#ifdef __unix__
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return -1;
#else
  return status;
#endif
}
#endif

}  // namespace testutil
