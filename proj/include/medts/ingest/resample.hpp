#pragma once

#include "medts/ingest/record.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace medts::ingest {

/// One second-order section, a0 normalized to 1.
struct Biquad {
  double b0, b1, b2, a1, a2;

  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

/// Butterworth low-pass of even order as cascaded biquads (bilinear transform, prewarped cutoff).
inline std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double fs) {
  if (order < 2 || order % 2 != 0) throw std::invalid_argument("butterworth order must be even and >= 2");
  if (!(cutoff_hz > 0) || !(cutoff_hz < fs / 2)) throw std::invalid_argument("cutoff must lie in (0, fs/2)");
  const double K = std::tan(std::numbers::pi * cutoff_hz / fs);
  std::vector<Biquad> out;
  for (int k = 1; k <= order / 2; ++k) {
    const double q = 1.0 / (2.0 * std::sin((2.0 * k - 1.0) * std::numbers::pi / (2.0 * order)));
    const double norm = 1.0 / (1.0 + K / q + K * K);
    const double b0 = K * K * norm;
    out.push_back(Biquad{b0, 2 * b0, b0, 2.0 * (K * K - 1.0) * norm, (1.0 - K / q + K * K) * norm});
  }
  return out;
}

namespace detail {

/// Runs the cascade in direct form II transposed, starting from the steady state for input x[0].
inline std::vector<double> sos_filter(const std::vector<Biquad>& sos, std::vector<double> x) {
  if (x.empty()) return x;
  double level = x.front();
  for (const auto& s : sos) {
    const double y0 = level * s.dc_gain();
    double z2 = s.b2 * level - s.a2 * y0;
    double z1 = s.b1 * level - s.a1 * y0 + z2;
    for (double& v : x) {
      const double y = s.b0 * v + z1;
      z1 = s.b1 * v - s.a1 * y + z2;
      z2 = s.b2 * v - s.a2 * y;
      v = y;
    }
    level = y0;
  }
  return x;
}

}  // namespace detail

/// Zero-phase forward-backward filtering with odd-reflection padding.
inline std::vector<double> filtfilt(const std::vector<Biquad>& sos, const std::vector<double>& x) {
  const auto n = static_cast<Index>(x.size());
  if (n < 2) return x;
  const Index pad = std::min<Index>(3 * (2 * static_cast<Index>(sos.size()) + 1), n - 1);
  std::vector<double> ext;
  ext.reserve(static_cast<std::size_t>(n + 2 * pad));
  for (Index i = pad; i >= 1; --i) ext.push_back(2 * x.front() - x[static_cast<std::size_t>(i)]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (Index i = 1; i <= pad; ++i) ext.push_back(2 * x.back() - x[static_cast<std::size_t>(n - 1 - i)]);
  ext = detail::sos_filter(sos, std::move(ext));
  std::reverse(ext.begin(), ext.end());
  ext = detail::sos_filter(sos, std::move(ext));
  std::reverse(ext.begin(), ext.end());
  return std::vector<double>(ext.begin() + pad, ext.begin() + pad + n);
}

inline Index downsampled_length(Index T, double fs, double target_fs) {
  return static_cast<Index>(std::floor(static_cast<double>(T) * target_fs / fs + 1e-9));
}

/// Low-passes at 0.45 * target_fs (8th order, zero phase) then linearly interpolates at the new sample times.
inline MultivariateSeries downsample(const MultivariateSeries& s, double target_fs) {
  if (!(target_fs > 0)) throw std::invalid_argument("target rate must be positive");
  if (target_fs >= s.fs()) throw std::invalid_argument("target rate must be below the source rate");
  const Index Tn = downsampled_length(s.length(), s.fs(), target_fs);
  if (Tn < 1) throw std::invalid_argument("series too short to downsample");
  const auto sos = butterworth_lowpass(8, 0.45 * target_fs, s.fs());
  const double ratio = s.fs() / target_fs;
  Matrix out(Tn, s.channels());
  for (Index c = 0; c < s.channels(); ++c) {
    const Vector col = s.channel(c);
    const auto y = filtfilt(sos, std::vector<double>(col.data(), col.data() + col.size()));
    for (Index j = 0; j < Tn; ++j) {
      const double pos = static_cast<double>(j) * ratio;
      const auto i = static_cast<Index>(std::floor(pos));
      const double frac = pos - static_cast<double>(i);
      const double a = y[static_cast<std::size_t>(i)];
      const double b = i + 1 < s.length() ? y[static_cast<std::size_t>(i + 1)] : a;
      out(j, c) = a + frac * (b - a);
    }
  }
  return MultivariateSeries(std::move(out), target_fs, s.feature_names(), s.patient_id());
}

/// Rescales annotations to a new rate: indices round to nearest, duplicates collapse, labels take the nearest source point.
inline AnnotationSet rescale_annotations(const AnnotationSet& a, double fs, double target_fs, Index new_T) {
  const double ratio = target_fs / fs;
  if (a.kind == AnnotationKind::point_labels) {
    std::vector<int> labels(static_cast<std::size_t>(new_T));
    const auto T = static_cast<Index>(a.labels.size());
    for (Index j = 0; j < new_T; ++j) {
      const Index src = std::min<Index>(T - 1, std::llround(static_cast<double>(j) / ratio));
      labels[static_cast<std::size_t>(j)] = a.labels[static_cast<std::size_t>(src)];
    }
    return AnnotationSet::from_labels(std::move(labels));
  }
  std::vector<Index> pts;
  for (Index p : a.points) {
    const Index q = std::llround(static_cast<double>(p) * ratio);
    if (q >= new_T) continue;
    if (pts.empty() || q > pts.back()) pts.push_back(q);
  }
  return AnnotationSet::from_points(a.kind, std::move(pts));
}

inline Record downsample(const Record& r, double target_fs) {
  Record out = r;
  out.series = std::make_shared<MultivariateSeries>(downsample(*r.series, target_fs));
  out.annotations = rescale_annotations(r.annotations, r.series->fs(), target_fs, out.series->length());
  return out;
}

}  // namespace medts::ingest
