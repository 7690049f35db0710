#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace medts {

using Index = std::int64_t;

/// Row-major so that a time point is one contiguous row of covariates.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// A uniformly sampled T x C signal.
class MultivariateSeries {
 public:
  MultivariateSeries(Matrix values, double fs, std::vector<std::string> feature_names,
                     std::string patient_id = {})
      : values_(std::move(values)),
        fs_(fs),
        feature_names_(std::move(feature_names)),
        patient_id_(std::move(patient_id)) {
    if (values_.rows() < 1 || values_.cols() < 1) {
      throw std::invalid_argument("series must have at least one time point and one channel");
    }
    if (!(fs_ > 0.0) || !std::isfinite(fs_)) {
      throw std::invalid_argument("sampling rate must be positive");
    }
    if (static_cast<Index>(feature_names_.size()) != values_.cols()) {
      throw std::invalid_argument("feature_names length must equal channel count");
    }
    if (!values_.allFinite()) {
      throw std::invalid_argument("series contains non-finite values");
    }
  }

  const Matrix& values() const noexcept { return values_; }
  double fs() const noexcept { return fs_; }
  const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
  const std::string& patient_id() const noexcept { return patient_id_; }
  Index length() const noexcept { return values_.rows(); }
  Index channels() const noexcept { return values_.cols(); }

  std::optional<Index> channel_index(const std::string& name) const {
    for (std::size_t i = 0; i < feature_names_.size(); ++i) {
      if (feature_names_[i] == name) return static_cast<Index>(i);
    }
    return std::nullopt;
  }

  Vector channel(Index c) const { return values_.col(c); }

 private:
  Matrix values_;
  double fs_;
  std::vector<std::string> feature_names_;
  std::string patient_id_;
};

/// Patch geometry over a window: patch i covers [i*stride, i*stride + patch_len).
struct PatchGrid {
  Index patch_len = 0;
  Index stride = 0;
  Index window = 0;
  Index n_patches = 0;

  Index offset(Index i) const noexcept { return i * stride; }
  std::vector<Index> indices() const {
    std::vector<Index> out(static_cast<std::size_t>(n_patches));
    for (Index i = 0; i < n_patches; ++i) out[static_cast<std::size_t>(i)] = i;
    return out;
  }
};

inline PatchGrid patch_indices(Index T, Index patch_len, Index stride) {
  if (patch_len < 1) throw std::invalid_argument("patch length must be positive");
  if (stride < 1) throw std::invalid_argument("stride must be positive");
  if (T < patch_len) throw std::invalid_argument("window shorter than patch");
  return PatchGrid{patch_len, stride, T, (T - patch_len) / stride + 1};
}

/// Half-open [start, end) run of points; label is absent for unclassified segments.
struct Segment {
  Index start = 0;
  Index end = 0;
  std::optional<int> label;

  Index length() const noexcept { return end - start; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

inline std::vector<Segment> assemble_segments(const std::vector<int>& labels) {
  if (labels.empty()) throw std::invalid_argument("cannot assemble segments from empty labels");
  std::vector<Segment> out;
  Index start = 0;
  const auto n = static_cast<Index>(labels.size());
  for (Index i = 1; i <= n; ++i) {
    if (i == n || labels[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(start)]) {
      out.push_back(Segment{start, i, labels[static_cast<std::size_t>(start)]});
      start = i;
    }
  }
  return out;
}

inline std::vector<int> flatten_segments(const std::vector<Segment>& segments) {
  std::vector<int> out;
  for (const auto& s : segments) {
    if (!s.label) throw std::invalid_argument("cannot flatten unlabeled segment");
    out.insert(out.end(), static_cast<std::size_t>(s.length()), *s.label);
  }
  return out;
}

/// Spans between consecutive boundaries plus the window edges; empty spans dropped.
inline std::vector<Segment> segments_from_boundaries(const std::vector<Index>& boundaries, Index T) {
  std::vector<Segment> out;
  Index prev = 0;
  for (Index b : boundaries) {
    if (b < 0 || b > T) throw std::out_of_range("boundary outside series");
    if (b > prev) out.push_back(Segment{prev, b, std::nullopt});
    prev = std::max(prev, b);
  }
  if (T > prev) out.push_back(Segment{prev, T, std::nullopt});
  return out;
}

/// Read-only view of a contiguous slice of a parent series and its per-point labels.
struct Window {
  std::shared_ptr<const MultivariateSeries> series;
  Index offset = 0;
  Index length = 0;
  std::vector<int> labels;

  auto values() const { return series->values().middleRows(offset, length); }
};

/// Windows at offsets 0, step, 2*step, ...; trailing partial window dropped.
inline std::vector<Window> window_series(const std::shared_ptr<const MultivariateSeries>& series,
                                         Index length, Index step,
                                         const std::vector<int>& point_labels = {}) {
  if (!series) throw std::invalid_argument("null series");
  if (length < 1 || step < 1) throw std::invalid_argument("window length and step must be positive");
  if (length > series->length()) throw std::invalid_argument("window longer than series");
  if (!point_labels.empty() && static_cast<Index>(point_labels.size()) != series->length()) {
    throw std::invalid_argument("label length must equal series length");
  }
  std::vector<Window> out;
  for (Index o = 0; o + length <= series->length(); o += step) {
    Window w{series, o, length, {}};
    if (!point_labels.empty()) {
      w.labels.assign(point_labels.begin() + o, point_labels.begin() + o + length);
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace medts
