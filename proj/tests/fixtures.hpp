#pragma once

// Deterministic EvalReport used by the golden-SVG and serialization tests.

#include "cabingaze/metrics.hpp"

namespace testutil {

inline cabingaze::metrics::EvalReport golden_report_fixture() {
  using namespace cabingaze;
  metrics::EvalReport rep;
  rep.n_samples = 120;
  rep.mean_angular_error_deg = 7.25;
  rep.ap = {{2.0, 0.125}, {4.0, 0.375}, {6.0, 0.625}, {8.0, 0.75}};

  for (int i = 0; i < annotate::kZoneCount; ++i) {
    auto& c = rep.zones.per_class[static_cast<size_t>(i)];
    c.tp = 8 + i;
    c.fp = i % 3;
    c.fn = (i + 1) % 4;
    c.support = c.tp + c.fn;
    c.precision = static_cast<double>(c.tp) / (c.tp + c.fp);
    c.recall = static_cast<double>(c.tp) / (c.tp + c.fn);
    rep.zones.confusion[static_cast<size_t>(i)][static_cast<size_t>(i)] = c.tp;
    rep.zones.confusion[static_cast<size_t>(i)]
                       [static_cast<size_t>((i + 1) % annotate::kZoneCount)] = c.fn;
  }
  double psum = 0.0, rsum = 0.0;
  for (int i = 0; i < annotate::kNamedZoneCount; ++i) {
    psum += rep.zones.per_class[static_cast<size_t>(i)].precision;
    rsum += rep.zones.per_class[static_cast<size_t>(i)].recall;
  }
  rep.zones.macro_precision = psum / annotate::kNamedZoneCount;
  rep.zones.macro_recall = rsum / annotate::kNamedZoneCount;
  rep.zones.accuracy = 0.8125;

  const double edges[] = {0.0, 20.0, 40.0, 60.0, 90.0};
  const int counts[] = {48, 36, 24, 10, 2};
  const double means[] = {3.5, 6.25, 9.0, 14.5, 31.0};
  for (int i = 0; i < 5; ++i) {
    metrics::RangeBin bin;
    bin.lo = edges[i];
    bin.hi = i < 4 ? edges[i + 1] : std::numeric_limits<double>::infinity();
    bin.count = counts[i];
    bin.mean_error = means[i];
    rep.ranges.bins.push_back(bin);
  }

  rep.level_error_n = {21.0, 18.5, 16.25, 15.0};
  rep.level_error_o = {23.0, 20.5, 18.25, 17.0};
  rep.final_error_n = 12.5;
  rep.final_error_o = 13.75;
  rep.zone_accuracy_fused = 0.9;
  rep.zone_accuracy_pos = 0.7;
  rep.zone_accuracy_visual = 0.85;
  return rep;
}

}  // namespace testutil
