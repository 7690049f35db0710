#pragma once

#include "medts/core/series.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::ingest {

enum class AnnotationKind { point_labels, boundary_points, anomaly_points };

inline std::string to_string(AnnotationKind k) {
  switch (k) {
    case AnnotationKind::point_labels: return "point_labels";
    case AnnotationKind::boundary_points: return "boundary_points";
    case AnnotationKind::anomaly_points: return "anomaly_points";
  }
  return "?";
}

inline AnnotationKind parse_annotation_kind(const std::string& s) {
  if (s == "point_labels") return AnnotationKind::point_labels;
  if (s == "boundary_points") return AnnotationKind::boundary_points;
  if (s == "anomaly_points") return AnnotationKind::anomaly_points;
  throw std::invalid_argument("unknown annotation kind: " + s);
}

/// Per-point class ids (point_labels) or sorted point indices (the other kinds).
struct AnnotationSet {
  AnnotationKind kind = AnnotationKind::boundary_points;
  std::vector<int> labels;
  std::vector<Index> points;

  static AnnotationSet from_labels(std::vector<int> labels) {
    return AnnotationSet{AnnotationKind::point_labels, std::move(labels), {}};
  }
  static AnnotationSet from_points(AnnotationKind kind, std::vector<Index> points) {
    if (kind == AnnotationKind::point_labels) throw std::invalid_argument("point_labels carry labels, not points");
    return AnnotationSet{kind, {}, std::move(points)};
  }

  void validate(Index T) const {
    if (kind == AnnotationKind::point_labels) {
      if (static_cast<Index>(labels.size()) != T) throw std::invalid_argument("point label count does not match series length");
      for (int l : labels)
        if (l < 0) throw std::invalid_argument("negative class id");
      return;
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i] < 0 || points[i] >= T) throw std::out_of_range("annotation out of range");
      if (i > 0 && points[i] <= points[i - 1]) throw std::invalid_argument("non-monotonic annotations");
    }
  }
};

struct LowFreqSignal {
  std::string name;
  double fs = 0.0;
  std::vector<double> values;
};

struct Record {
  std::string id;
  std::shared_ptr<const MultivariateSeries> series;
  AnnotationSet annotations;
  nlohmann::json patient = nlohmann::json::object();
  std::vector<LowFreqSignal> low_freq;

  Index anomaly_count() const {
    return annotations.kind == AnnotationKind::anomaly_points ? static_cast<Index>(annotations.points.size()) : 0;
  }
};

/// w = floor(window_ms * fs / 1000); each point p marks [p - w, p + w] clipped to [0, T).
inline std::vector<std::uint8_t> expand_anomaly_annotations(const std::vector<Index>& points, double window_ms,
                                                            double fs, Index T) {
  if (window_ms < 0) throw std::invalid_argument("negative anomaly window");
  if (!(fs > 0)) throw std::invalid_argument("sampling rate must be positive");
  const auto w = static_cast<Index>(std::floor(window_ms * fs / 1000.0 + 1e-9));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(T), 0);
  Index prev = -1;
  for (Index p : points) {
    if (p < 0 || p >= T) throw std::out_of_range("annotation out of range");
    if (p <= prev) throw std::invalid_argument("non-monotonic annotations");
    prev = p;
    const Index lo = std::max<Index>(0, p - w), hi = std::min<Index>(T - 1, p + w);
    std::fill(mask.begin() + lo, mask.begin() + hi + 1, std::uint8_t{1});
  }
  return mask;
}

inline std::vector<Index> mask_to_points(const std::vector<std::uint8_t>& mask) {
  std::vector<Index> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(static_cast<Index>(i));
  return out;
}

}  // namespace medts::ingest
