#include "cabingaze/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

namespace cabingaze::metrics {

using geom::Vec3;

double angular_error_deg(const Vec3& g1, const Vec3& g2) {
  if (std::abs(g1.norm() - 1.0) > 1e-9 || std::abs(g2.norm() - 1.0) > 1e-9) {
    throw NotUnit("angular error expects unit directions");
  }
  const double d = std::clamp(g1.dot(g2), -1.0, 1.0);
  return geom::rad_to_deg(std::acos(d));
}

double average_precision_at(const std::vector<double>& errors_deg, double k_deg) {
  if (errors_deg.empty()) throw EmptySet("no errors to score");
  if (!(k_deg > 0.0)) throw ConfigError("AP threshold must be positive");
  const auto hits = std::count_if(errors_deg.begin(), errors_deg.end(),
                                  [k_deg](double e) { return e < k_deg; });
  return static_cast<double>(hits) / static_cast<double>(errors_deg.size());
}

ZoneReport zone_metrics(const std::vector<annotate::Zone>& pred,
                        const std::vector<annotate::Zone>& truth) {
  if (pred.size() != truth.size()) {
    throw LengthMismatch("prediction/truth lengths differ: " +
                         std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()));
  }
  ZoneReport rep;
  int correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const int p = static_cast<int>(pred[i]);
    const int t = static_cast<int>(truth[i]);
    if (p < 0 || p >= annotate::kZoneCount || t < 0 || t >= annotate::kZoneCount) {
      throw UnknownZone("zone index out of range");
    }
    rep.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)] += 1;
    if (p == t) ++correct;
  }
  for (int c = 0; c < annotate::kZoneCount; ++c) {
    auto& m = rep.per_class[static_cast<size_t>(c)];
    m.tp = rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    for (int other = 0; other < annotate::kZoneCount; ++other) {
      if (other == c) continue;
      m.fp += rep.confusion[static_cast<size_t>(other)][static_cast<size_t>(c)];
      m.fn += rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(other)];
    }
    m.support = m.tp + m.fn;
    m.precision = (m.tp + m.fp) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
    m.recall = (m.tp + m.fn) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
  }
  for (int c = 0; c < annotate::kNamedZoneCount; ++c) {
    rep.macro_precision += rep.per_class[static_cast<size_t>(c)].precision;
    rep.macro_recall += rep.per_class[static_cast<size_t>(c)].recall;
  }
  rep.macro_precision /= annotate::kNamedZoneCount;
  rep.macro_recall /= annotate::kNamedZoneCount;
  rep.accuracy = pred.empty() ? 0.0 : static_cast<double>(correct) / pred.size();
  return rep;
}

RangeBinReport range_bins(const std::vector<Vec3>& dirs,
                          const std::vector<double>& errors_deg,
                          const std::vector<double>& edges_deg, const Vec3& frontal) {
  if (dirs.size() != errors_deg.size()) {
    throw LengthMismatch("directions/errors lengths differ");
  }
  if (edges_deg.size() < 2) throw ConfigError("need at least two bin edges");
  for (size_t i = 1; i < edges_deg.size(); ++i) {
    if (!(edges_deg[i] > edges_deg[i - 1])) {
      throw ConfigError("bin edges must be strictly increasing");
    }
  }

  RangeBinReport rep;
  for (size_t i = 0; i + 1 < edges_deg.size(); ++i) {
    RangeBin b;
    b.lo = edges_deg[i];
    b.hi = edges_deg[i + 1];
    rep.bins.push_back(b);
  }
  RangeBin overflow;
  overflow.lo = edges_deg.back();
  overflow.hi = std::numeric_limits<double>::infinity();
  rep.bins.push_back(overflow);

  std::vector<double> sums(rep.bins.size(), 0.0);
  for (size_t i = 0; i < dirs.size(); ++i) {
    const double angle = angular_error_deg(dirs[i], frontal);
    size_t bin = rep.bins.size() - 1;  // overflow by default
    if (angle >= edges_deg.front()) {
      for (size_t k = 0; k + 1 < edges_deg.size(); ++k) {
        if (angle < edges_deg[k + 1]) {
          bin = k;
          break;
        }
      }
    }
    rep.bins[bin].count += 1;
    sums[bin] += errors_deg[i];
  }
  for (size_t k = 0; k < rep.bins.size(); ++k) {
    if (rep.bins[k].count > 0) rep.bins[k].mean_error = sums[k] / rep.bins[k].count;
  }
  return rep;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["n_samples"] = report.n_samples;
  j["mean_angular_error_deg"] = report.mean_angular_error_deg;
  nlohmann::json ap = nlohmann::json::array();
  for (const auto& [t, v] : report.ap) {
    ap.push_back({{"threshold", t}, {"value", v}});
  }
  j["ap"] = ap;

  nlohmann::json per_class = nlohmann::json::array();
  for (int c = 0; c < annotate::kZoneCount; ++c) {
    const auto& m = report.zones.per_class[static_cast<size_t>(c)];
    per_class.push_back({{"zone", annotate::zone_to_string(static_cast<annotate::Zone>(c))},
                         {"tp", m.tp},
                         {"fp", m.fp},
                         {"fn", m.fn},
                         {"support", m.support},
                         {"precision", m.precision},
                         {"recall", m.recall}});
  }
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : report.zones.confusion) {
    nlohmann::json r = nlohmann::json::array();
    for (int v : row) r.push_back(v);
    confusion.push_back(r);
  }
  j["zones"] = {{"per_class", per_class},
                {"macro_precision", report.zones.macro_precision},
                {"macro_recall", report.zones.macro_recall},
                {"accuracy", report.zones.accuracy},
                {"confusion", confusion}};

  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : report.ranges.bins) {
    nlohmann::json bj = {{"lo", b.lo}, {"count", b.count}, {"mean_error", b.mean_error}};
    if (std::isfinite(b.hi)) {
      bj["hi"] = b.hi;
    } else {
      bj["hi"] = nullptr;
    }
    bins.push_back(bj);
  }
  j["ranges"] = {{"bins", bins}};

  j["mechanism"] = {{"level_error_n", report.level_error_n},
                    {"level_error_o", report.level_error_o},
                    {"final_error_n", report.final_error_n},
                    {"final_error_o", report.final_error_o},
                    {"zone_accuracy_fused", report.zone_accuracy_fused},
                    {"zone_accuracy_pos", report.zone_accuracy_pos},
                    {"zone_accuracy_visual", report.zone_accuracy_visual}};
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw MalformedReport("report is not a JSON object");
  }
  EvalReport rep;
  try {
    rep.n_samples = j.at("n_samples").get<int>();
    rep.mean_angular_error_deg = j.at("mean_angular_error_deg").get<double>();
    for (const auto& e : j.at("ap")) {
      rep.ap.emplace_back(e.at("threshold").get<double>(), e.at("value").get<double>());
    }
    const auto& z = j.at("zones");
    const auto& pc = z.at("per_class");
    if (pc.size() != annotate::kZoneCount) {
      throw MalformedReport("per_class must list all zones");
    }
    for (size_t c = 0; c < pc.size(); ++c) {
      auto& m = rep.zones.per_class[c];
      m.tp = pc[c].at("tp").get<int>();
      m.fp = pc[c].at("fp").get<int>();
      m.fn = pc[c].at("fn").get<int>();
      m.support = pc[c].at("support").get<int>();
      m.precision = pc[c].at("precision").get<double>();
      m.recall = pc[c].at("recall").get<double>();
    }
    rep.zones.macro_precision = z.at("macro_precision").get<double>();
    rep.zones.macro_recall = z.at("macro_recall").get<double>();
    rep.zones.accuracy = z.at("accuracy").get<double>();
    const auto& conf = z.at("confusion");
    for (size_t r = 0; r < annotate::kZoneCount; ++r) {
      for (size_t c = 0; c < annotate::kZoneCount; ++c) {
        rep.zones.confusion[r][c] = conf.at(r).at(c).get<int>();
      }
    }
    for (const auto& bj : j.at("ranges").at("bins")) {
      RangeBin b;
      b.lo = bj.at("lo").get<double>();
      b.hi = bj.at("hi").is_null() ? std::numeric_limits<double>::infinity()
                                   : bj.at("hi").get<double>();
      b.count = bj.at("count").get<int>();
      b.mean_error = bj.at("mean_error").get<double>();
      rep.ranges.bins.push_back(b);
    }
    const auto& mech = j.at("mechanism");
    for (int i = 0; i < 4; ++i) {
      rep.level_error_n[static_cast<size_t>(i)] =
          mech.at("level_error_n").at(i).get<double>();
      rep.level_error_o[static_cast<size_t>(i)] =
          mech.at("level_error_o").at(i).get<double>();
    }
    rep.final_error_n = mech.at("final_error_n").get<double>();
    rep.final_error_o = mech.at("final_error_o").get<double>();
    rep.zone_accuracy_fused = mech.at("zone_accuracy_fused").get<double>();
    rep.zone_accuracy_pos = mech.at("zone_accuracy_pos").get<double>();
    rep.zone_accuracy_visual = mech.at("zone_accuracy_visual").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedReport(std::string("report field missing or mistyped: ") + e.what());
  }
  return rep;
}

namespace {

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

std::string bin_label(const RangeBin& b) {
  if (!std::isfinite(b.hi)) return fmt("%.0f", b.lo) + "+";
  return "[" + fmt("%.0f", b.lo) + "," + fmt("%.0f", b.hi) + ")";
}

}  // namespace

std::string report_table(const EvalReport& report) {
  std::string out;
  out += "samples                     " + std::to_string(report.n_samples) + "\n";
  out += "mean angular error (deg)    " + fmt("%.3f", report.mean_angular_error_deg) + "\n";
  for (const auto& [t, v] : report.ap) {
    out += "AP@" + fmt("%.0f", t) + "                        " + fmt("%.4f", v) + "\n";
  }
  out += "\nzone                        precision  recall  support\n";
  for (int c = 0; c < annotate::kZoneCount; ++c) {
    const auto& m = report.zones.per_class[static_cast<size_t>(c)];
    std::string name = annotate::zone_to_string(static_cast<annotate::Zone>(c));
    name.resize(26, ' ');
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s  %.4f     %.4f  %d\n", name.c_str(), m.precision,
                  m.recall, m.support);
    out += buf;
  }
  out += "macro over 9 zones          " + fmt("%.4f", report.zones.macro_precision) +
         "     " + fmt("%.4f", report.zones.macro_recall) + "\n";
  out += "zone accuracy               " + fmt("%.4f", report.zones.accuracy) + "\n";
  out += "\nrange (deg from frontal)    count  mean error\n";
  for (const auto& b : report.ranges.bins) {
    std::string label = bin_label(b);
    label.resize(26, ' ');
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s  %-5d  %.3f\n", label.c_str(), b.count,
                  b.mean_error);
    out += buf;
  }
  return out;
}

std::string report_svg(const EvalReport& report) {
  const int width = 640;
  const int height = 360;
  const int margin_left = 60;
  const int margin_bottom = 50;
  const int margin_top = 30;
  const int plot_w = width - margin_left - 20;
  const int plot_h = height - margin_top - margin_bottom;

  double max_err = 1.0;
  for (const auto& b : report.ranges.bins) max_err = std::max(max_err, b.mean_error);
  const double y_max = 10.0 * std::ceil(max_err / 10.0);

  const size_t n = report.ranges.bins.size();
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(margin_left) + "\" y=\"20\" font-family=\"monospace\" "
         "font-size=\"14\">mean angular error by gaze range (deg from frontal)</text>\n";
  // axes
  svg += "<line x1=\"" + std::to_string(margin_left) + "\" y1=\"" +
         std::to_string(margin_top) + "\" x2=\"" + std::to_string(margin_left) +
         "\" y2=\"" + std::to_string(margin_top + plot_h) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + std::to_string(margin_left) + "\" y1=\"" +
         std::to_string(margin_top + plot_h) + "\" x2=\"" +
         std::to_string(margin_left + plot_w) + "\" y2=\"" +
         std::to_string(margin_top + plot_h) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"8\" y=\"" + std::to_string(margin_top + 5) +
         "\" font-family=\"monospace\" font-size=\"12\">" + fmt("%.0f", y_max) +
         "</text>\n";
  svg += "<text x=\"8\" y=\"" + std::to_string(margin_top + plot_h) +
         "\" font-family=\"monospace\" font-size=\"12\">0</text>\n";

  for (size_t i = 0; i < n; ++i) {
    const auto& b = report.ranges.bins[i];
    const int slot = plot_w / static_cast<int>(n);
    const int bar_w = std::max(10, slot - 20);
    const int x = margin_left + static_cast<int>(i) * slot + (slot - bar_w) / 2;
    const int bar_h =
        y_max > 0.0 ? static_cast<int>(std::lround(plot_h * b.mean_error / y_max)) : 0;
    const int y = margin_top + plot_h - bar_h;
    svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) +
           "\" width=\"" + std::to_string(bar_w) + "\" height=\"" + std::to_string(bar_h) +
           "\" fill=\"#4878a8\"/>\n";
    svg += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y - 4) +
           "\" font-family=\"monospace\" font-size=\"11\">" + fmt("%.1f", b.mean_error) +
           "</text>\n";
    svg += "<text x=\"" + std::to_string(x) + "\" y=\"" +
           std::to_string(margin_top + plot_h + 16) +
           "\" font-family=\"monospace\" font-size=\"11\">" + bin_label(b) + "</text>\n";
    svg += "<text x=\"" + std::to_string(x) + "\" y=\"" +
           std::to_string(margin_top + plot_h + 32) +
           "\" font-family=\"monospace\" font-size=\"11\">n=" + std::to_string(b.count) +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace cabingaze::metrics
