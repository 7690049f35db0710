#pragma once

// SVG waveform plots with prediction overlays: one panel per channel, then a
// strip of predicted segments (semseg), boundary ticks (boundary) or the
// anomaly mask and score trace (anomaly). Ground truth is drawn as a thin
// band above the predictions.

#include "medts/ingest/record.hpp"
#include "medts/tasks/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::runner {

namespace detail {

inline std::string class_color(int c) {
  static const char* palette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#76b7b2", "#edc948", "#9c755f"};
  return palette[static_cast<std::size_t>(std::abs(c)) % 8];
}

inline std::string polyline(const std::vector<double>& v, double x0, double y0, double w, double h) {
  std::ostringstream os;
  os.precision(5);
  const auto [mn_it, mx_it] = std::minmax_element(v.begin(), v.end());
  const double mn = *mn_it, span = *mx_it - *mn_it > 0 ? *mx_it - *mn_it : 1.0;
  const double dx = v.size() > 1 ? w / static_cast<double>(v.size() - 1) : 0.0;
  os << "<polyline fill=\"none\" stroke=\"#222\" stroke-width=\"0.8\" points=\"";
  for (std::size_t i = 0; i < v.size(); ++i) {
    os << x0 + dx * static_cast<double>(i) << ',' << y0 + h - h * (v[i] - mn) / span << ' ';
  }
  os << "\"/>\n";
  return os.str();
}

inline std::string runs(const std::vector<int>& labels, double x0, double y, double w, double h, bool skip_zero) {
  std::ostringstream os;
  os.precision(5);
  const double dx = w / static_cast<double>(std::max<std::size_t>(1, labels.size()));
  for (const auto& s : assemble_segments(labels)) {
    const int c = s.label.value_or(0);
    if (skip_zero && c == 0) continue;
    os << "<rect x=\"" << x0 + dx * static_cast<double>(s.start) << "\" y=\"" << y << "\" width=\""
       << dx * static_cast<double>(s.length()) << "\" height=\"" << h << "\" fill=\""
       << (skip_zero ? std::string("#e15759") : class_color(c)) << "\"/>\n";
  }
  return os.str();
}

inline std::string ticks(const std::vector<Index>& points, Index T, double x0, double y, double w, double h,
                         const std::string& color) {
  std::ostringstream os;
  os.precision(5);
  const double dx = w / static_cast<double>(std::max<Index>(1, T));
  for (Index p : points) {
    const double x = x0 + dx * static_cast<double>(p);
    os << "<line x1=\"" << x << "\" y1=\"" << y << "\" x2=\"" << x << "\" y2=\"" << y + h << "\" stroke=\"" << color
       << "\" stroke-width=\"1\"/>\n";
  }
  return os.str();
}

}  // namespace detail

/// Renders `record` with `pred` overlays; `gt_mask` is the expanded anomaly ground truth when task is anomaly.
inline std::string render_svg(const ingest::Record& record, const tasks::TaskPrediction& pred,
                              const std::vector<std::uint8_t>& gt_mask = {}) {
  const auto& s = *record.series;
  const Index T = s.length();
  const double W = 1200, left = 80, plot_w = W - left - 20, panel_h = 70, gap = 12, strip_h = 14;
  const auto C = static_cast<double>(s.channels());
  const double strips_y = 20 + C * (panel_h + gap);
  const double H = strips_y + 2 * strip_h + gap + (pred.task == TaskKind::anomaly ? panel_h + gap : 0) + 20;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"14\">" << record.id << " (" << to_string(pred.task) << ")</text>\n";
  for (Index c = 0; c < s.channels(); ++c) {
    const double y = 20 + static_cast<double>(c) * (panel_h + gap);
    const Vector col = s.channel(c);
    os << "<text x=\"4\" y=\"" << y + panel_h / 2 << "\">" << s.feature_names()[static_cast<std::size_t>(c)] << "</text>\n";
    os << detail::polyline(std::vector<double>(col.data(), col.data() + col.size()), left, y, plot_w, panel_h);
    if (pred.task == TaskKind::boundary) os << detail::ticks(pred.boundary_points, T, left, y, plot_w, panel_h, "#e15759");
  }
  const double gt_y = strips_y, pr_y = strips_y + strip_h + 2;
  os << "<text x=\"4\" y=\"" << gt_y + 11 << "\">truth</text>\n<text x=\"4\" y=\"" << pr_y + 11 << "\">predicted</text>\n";
  switch (pred.task) {
    case TaskKind::semseg:
      if (!record.annotations.labels.empty()) os << detail::runs(record.annotations.labels, left, gt_y, plot_w, strip_h, false);
      os << detail::runs(pred.labels, left, pr_y, plot_w, strip_h, false);
      break;
    case TaskKind::boundary:
      os << detail::ticks(record.annotations.points, T, left, gt_y, plot_w, strip_h, "#222");
      os << detail::ticks(pred.boundary_points, T, left, pr_y, plot_w, strip_h, "#e15759");
      break;
    case TaskKind::anomaly: {
      os << detail::runs(std::vector<int>(gt_mask.begin(), gt_mask.end()), left, gt_y, plot_w, strip_h, true);
      os << detail::runs(std::vector<int>(pred.anomaly_mask.begin(), pred.anomaly_mask.end()), left, pr_y, plot_w, strip_h, true);
      const double y = pr_y + strip_h + gap;
      os << "<text x=\"4\" y=\"" << y + panel_h / 2 << "\">score</text>\n";
      if (!pred.scores.empty()) os << detail::polyline(pred.scores, left, y, plot_w, panel_h);
      break;
    }
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_svg(const std::filesystem::path& path, const ingest::Record& record, const tasks::TaskPrediction& pred,
                      const std::vector<std::uint8_t>& gt_mask = {}) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write plot: " + path.string());
  f << render_svg(record, pred, gt_mask);
}

}  // namespace medts::runner
