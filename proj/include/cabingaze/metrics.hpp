#pragma once

#include <array>
#include <string>
#include <vector>

#include "cabingaze/annotate.hpp"
#include "cabingaze/errors.hpp"
#include "cabingaze/geom.hpp"

namespace cabingaze::metrics {

double angular_error_deg(const geom::Vec3& g1, const geom::Vec3& g2);

// Fraction of errors strictly below k degrees.
double average_precision_at(const std::vector<double>& errors_deg, double k_deg);

struct ZoneClassMetrics {
  int tp = 0, fp = 0, fn = 0;
  int support = 0;       // truth count
  double precision = 0.0;
  double recall = 0.0;
};

struct ZoneReport {
  std::array<ZoneClassMetrics, annotate::kZoneCount> per_class;
  // Macro averages over the 9 named zones; None stays in the confusion matrix
  // but out of the averages.
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double accuracy = 0.0;  // over all classes
  std::array<std::array<int, annotate::kZoneCount>, annotate::kZoneCount> confusion{};
};

ZoneReport zone_metrics(const std::vector<annotate::Zone>& pred,
                        const std::vector<annotate::Zone>& truth);

struct RangeBin {
  double lo = 0.0, hi = 0.0;  // degrees from frontal; overflow bin has hi = inf
  int count = 0;
  double mean_error = 0.0;
};

struct RangeBinReport {
  std::vector<RangeBin> bins;  // last entry is the overflow bin
};

// Bins directions by angle to the frontal vector into [e_i, e_i+1); pairs each
// direction with its error for per-bin means.
RangeBinReport range_bins(const std::vector<geom::Vec3>& dirs,
                          const std::vector<double>& errors_deg,
                          const std::vector<double>& edges_deg,
                          const geom::Vec3& frontal = geom::Vec3(0.0, 0.0, -1.0));

struct EvalReport {
  int n_samples = 0;
  double mean_angular_error_deg = 0.0;
  std::vector<std::pair<double, double>> ap;  // (threshold deg, fraction)
  ZoneReport zones;
  RangeBinReport ranges;
  // Mechanism block: per-level and per-head comparisons.
  std::array<double, 4> level_error_n{}, level_error_o{};
  double final_error_n = 0.0, final_error_o = 0.0;
  double zone_accuracy_fused = 0.0;
  double zone_accuracy_pos = 0.0;
  double zone_accuracy_visual = 0.0;
};

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& json_text);  // throws MalformedReport
std::string report_table(const EvalReport& report);
std::string report_svg(const EvalReport& report);  // range-bin bar chart

inline const std::vector<double>& default_ap_thresholds() {
  static const std::vector<double> t = {2.0, 4.0, 6.0, 8.0};
  return t;
}

inline const std::vector<double>& default_range_edges() {
  static const std::vector<double> e = {0.0, 20.0, 40.0, 60.0, 90.0};
  return e;
}

}  // namespace cabingaze::metrics
