#pragma once

#include "medts/core/series.hpp"
#include "medts/tasks/anomaly.hpp"
#include "medts/tasks/boundary.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace medts::baselines {

struct AnomalyOutput {
  std::vector<double> scores;
  std::vector<std::uint8_t> mask;
};

namespace detail {

inline std::vector<double> column(const Matrix& x, Index c) {
  std::vector<double> v(static_cast<std::size_t>(x.rows()));
  for (Index t = 0; t < x.rows(); ++t) v[static_cast<std::size_t>(t)] = x(t, c);
  return v;
}

inline Matrix stack_rows(const std::vector<const MultivariateSeries*>& series) {
  if (series.empty()) throw std::invalid_argument("no training series");
  Index rows = 0;
  const Index C = series.front()->channels();
  for (const auto* s : series) {
    if (s->channels() != C) throw std::invalid_argument("training series differ in channel count");
    rows += s->length();
  }
  Matrix out(rows, C);
  Index r = 0;
  for (const auto* s : series) {
    out.middleRows(r, s->length()) = s->values();
    r += s->length();
  }
  return out;
}

}  // namespace detail

/// Flags values outside the per-channel [q_lo, q_hi] nearest-rank band of the training data.
class QuantileDetector {
 public:
  QuantileDetector(double q_lo = 0.05, double q_hi = 0.95) : q_lo_(q_lo), q_hi_(q_hi) {
    if (!(q_lo >= 0 && q_lo <= q_hi && q_hi <= 1)) throw std::invalid_argument("quantiles must satisfy 0 <= lo <= hi <= 1");
  }

  void fit(const std::vector<const MultivariateSeries*>& train) {
    const Matrix x = detail::stack_rows(train);
    lo_.resize(x.cols());
    hi_.resize(x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
      const auto v = detail::column(x, c);
      lo_(c) = tasks::nearest_rank(v, q_lo_);
      hi_(c) = tasks::nearest_rank(v, q_hi_);
    }
  }

  AnomalyOutput detect(const MultivariateSeries& s) const {
    if (lo_.size() != s.channels()) throw std::invalid_argument("detector not fit for this channel count");
    AnomalyOutput out;
    for (Index t = 0; t < s.length(); ++t) {
      double score = 0;
      bool flag = false;
      for (Index c = 0; c < s.channels(); ++c) {
        const double x = s.values()(t, c);
        const double span = std::max(hi_(c) - lo_(c), 1e-12);
        score = std::max(score, std::max({lo_(c) - x, x - hi_(c), 0.0}) / span);
        flag = flag || x < lo_(c) || x > hi_(c);
      }
      out.scores.push_back(score);
      out.mask.push_back(flag);
    }
    return out;
  }

 private:
  double q_lo_, q_hi_;
  Eigen::RowVectorXd lo_, hi_;
};

/// Flags |x - mean| > k * sd with per-channel population statistics of the training data.
class ZScoreDetector {
 public:
  explicit ZScoreDetector(double k = 3.0) : k_(k) {
    if (!(k > 0)) throw std::invalid_argument("z-score threshold must be positive");
  }

  void fit(const std::vector<const MultivariateSeries*>& train) {
    const Matrix x = detail::stack_rows(train);
    mu_ = x.colwise().mean();
    sd_ = (x.rowwise() - mu_).array().square().colwise().mean().sqrt();
  }

  AnomalyOutput detect(const MultivariateSeries& s) const {
    if (mu_.size() != s.channels()) throw std::invalid_argument("detector not fit for this channel count");
    AnomalyOutput out;
    for (Index t = 0; t < s.length(); ++t) {
      double score = 0;
      bool flag = false;
      for (Index c = 0; c < s.channels(); ++c) {
        const double dev = std::abs(s.values()(t, c) - mu_(c));
        score = std::max(score, dev / std::max(sd_(c), 1e-12));
        flag = flag || dev > k_ * sd_(c);
      }
      out.scores.push_back(score);
      out.mask.push_back(flag);
    }
    return out;
  }

 private:
  double k_;
  Eigen::RowVectorXd mu_, sd_;
};

/// Centered rolling mean of w points (clipped at the edges).
inline Matrix rolling_mean(const Matrix& x, Index w) {
  const Index T = x.rows();
  Matrix out(T, x.cols());
  const Index before = (w - 1) / 2, after = w - 1 - before;
  for (Index c = 0; c < x.cols(); ++c) {
    Vector prefix = Vector::Zero(T + 1);
    for (Index t = 0; t < T; ++t) prefix(t + 1) = prefix(t) + x(t, c);
    for (Index t = 0; t < T; ++t) {
      const Index lo = std::max<Index>(0, t - before), hi = std::min<Index>(T, t + after + 1);
      out(t, c) = (prefix(hi) - prefix(lo)) / static_cast<double>(hi - lo);
    }
  }
  return out;
}

/// Flags |x - rolling_mean_w(x)| > threshold; without an explicit threshold, fit sets k residual sds.
class RollingDetector {
 public:
  explicit RollingDetector(Index window = 25, std::optional<double> threshold = std::nullopt, double k = 3.0)
      : w_(window), fixed_(threshold), k_(k) {
    if (window < 1) throw std::invalid_argument("rolling window must be positive");
  }

  void fit(const std::vector<const MultivariateSeries*>& train) {
    if (train.empty()) throw std::invalid_argument("no training series");
    const Index C = train.front()->channels();
    thr_.resize(C);
    if (fixed_) {
      thr_.setConstant(*fixed_);
      return;
    }
    Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(C);
    double n = 0;
    for (const auto* s : train) {
      const Matrix r = residual(s->values());
      sq += r.array().square().matrix().colwise().sum();
      n += static_cast<double>(r.rows());
    }
    thr_ = k_ * (sq / n).array().sqrt();
  }

  AnomalyOutput detect(const MultivariateSeries& s) const {
    if (thr_.size() != s.channels()) throw std::invalid_argument("detector not fit for this channel count");
    const Matrix r = residual(s.values());
    AnomalyOutput out;
    for (Index t = 0; t < r.rows(); ++t) {
      double score = 0;
      bool flag = false;
      for (Index c = 0; c < r.cols(); ++c) {
        const double dev = std::abs(r(t, c));
        score = std::max(score, dev / std::max(thr_(c), 1e-12));
        flag = flag || dev > thr_(c);
      }
      out.scores.push_back(score);
      out.mask.push_back(flag);
    }
    return out;
  }

 private:
  Matrix residual(const Matrix& x) const {
    if (w_ >= x.rows()) throw std::invalid_argument("rolling window must be shorter than the series");
    return x - rolling_mean(x, w_);
  }

  Index w_;
  std::optional<double> fixed_;
  double k_;
  Eigen::RowVectorXd thr_;
};

namespace detail {

/// FFTW planning is not thread-safe.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// Reconstruction from the m largest-magnitude real-FFT bins (ties to the lower bin).
inline std::vector<double> fft_reconstruct(const std::vector<double>& x, Index m) {
  const auto n = static_cast<Index>(x.size());
  if (m < 1 || 2 * m >= n) throw std::invalid_argument("kept frequency count must satisfy 1 <= m < T/2");
  const Index bins = n / 2 + 1;
  std::vector<double> in(x), out(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(bins));
  auto* cspec = reinterpret_cast<fftw_complex*>(spec.data());
  fftw_plan fwd, inv;
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), cspec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), cspec, out.data(), FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  std::vector<Index> order(static_cast<std::size_t>(bins));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return std::abs(spec[static_cast<std::size_t>(a)]) > std::abs(spec[static_cast<std::size_t>(b)]);
  });
  for (std::size_t k = static_cast<std::size_t>(m); k < order.size(); ++k) spec[static_cast<std::size_t>(order[k])] = 0;
  fftw_execute(inv);
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

/// Squared error of a per-channel m-component FFT reconstruction, thresholded per channel at the
/// (1 - ratio) nearest-rank quantile of training errors and OR-combined.
class FftDetector {
 public:
  explicit FftDetector(Index m = 3, double anomaly_ratio = 0.1) : m_(m), ratio_(anomaly_ratio) {
    if (m < 1) throw std::invalid_argument("kept frequency count must be positive");
  }

  void fit(const std::vector<const MultivariateSeries*>& train) {
    if (train.empty()) throw std::invalid_argument("no training series");
    const Index C = train.front()->channels();
    std::vector<std::vector<double>> errs(static_cast<std::size_t>(C));
    for (const auto* s : train) {
      const Matrix e = errors(s->values());
      for (Index c = 0; c < C; ++c)
        for (Index t = 0; t < e.rows(); ++t) errs[static_cast<std::size_t>(c)].push_back(e(t, c));
    }
    thr_.resize(C);
    scale_.resize(C);
    for (Index c = 0; c < C; ++c) {
      const auto& v = errs[static_cast<std::size_t>(c)];
      thr_(c) = tasks::anomaly_threshold(v, ratio_).threshold;
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      scale_(c) = mean > 1e-12 ? mean : 1.0;
    }
  }

  /// Per-point score without a fit: maximum over channels of the raw squared error.
  std::vector<double> raw_scores(const MultivariateSeries& s) const {
    const Matrix e = errors(s.values());
    std::vector<double> out(static_cast<std::size_t>(e.rows()));
    for (Index t = 0; t < e.rows(); ++t) out[static_cast<std::size_t>(t)] = e.row(t).maxCoeff();
    return out;
  }

  AnomalyOutput detect(const MultivariateSeries& s) const {
    if (thr_.size() != s.channels()) throw std::invalid_argument("detector not fit for this channel count");
    const Matrix e = errors(s.values());
    AnomalyOutput out;
    for (Index t = 0; t < e.rows(); ++t) {
      out.scores.push_back((e.row(t).array() / scale_.array()).maxCoeff());
      out.mask.push_back((e.row(t).array() > thr_.array()).any());
    }
    return out;
  }

 private:
  Matrix errors(const Matrix& x) const {
    Matrix e(x.rows(), x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
      const auto v = detail::column(x, c);
      const auto r = fft_reconstruct(v, m_);
      for (Index t = 0; t < x.rows(); ++t) e(t, c) = std::pow(v[static_cast<std::size_t>(t)] - r[static_cast<std::size_t>(t)], 2);
    }
    return e;
  }

  Index m_;
  double ratio_;
  Eigen::RowVectorXd thr_, scale_;
};

}  // namespace medts::baselines
