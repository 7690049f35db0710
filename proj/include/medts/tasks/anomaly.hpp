#pragma once

#include "medts/tasks/boundary.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace medts::tasks {

/// Per-covariate variance of validation residuals x - x_hat; zero variances fall back to 1.
inline Eigen::RowVectorXd residual_variance(const std::vector<Matrix>& x, const std::vector<Matrix>& x_hat) {
  if (x.empty() || x.size() != x_hat.size()) throw std::invalid_argument("need matching validation windows");
  const Index C = x.front().cols();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(C), sq = Eigen::RowVectorXd::Zero(C);
  double n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].rows() != x_hat[i].rows() || x[i].cols() != C || x_hat[i].cols() != C) {
      throw std::invalid_argument("validation window shape mismatch");
    }
    const Matrix e = x[i] - x_hat[i];
    sum += e.colwise().sum();
    sq += e.array().square().matrix().colwise().sum();
    n += static_cast<double>(e.rows());
  }
  Eigen::RowVectorXd var = sq / n - (sum / n).array().square().matrix();
  for (Index c = 0; c < C; ++c)
    if (!(var(c) > 1e-12)) var(c) = 1.0;
  return var;
}

/// score_t = mean_c (x - x_hat)^2 / variance_c.
inline std::vector<double> anomaly_scores(const Matrix& x, const Matrix& x_hat, const Eigen::RowVectorXd& variance) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw std::invalid_argument("reconstruction shape mismatch");
  if (variance.size() != x.cols()) throw std::invalid_argument("variance does not match covariate count");
  if ((variance.array() <= 0).any()) throw std::invalid_argument("variances must be positive");
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (Index t = 0; t < x.rows(); ++t) {
    out[static_cast<std::size_t>(t)] =
        ((x.row(t) - x_hat.row(t)).array().square() / variance.array()).mean();
  }
  return out;
}

struct ThresholdSpec {
  double anomaly_ratio = 0.1;
  double threshold = 0;
  bool degenerate = false;  // every validation score equal
};

/// Threshold at the (1 - ratio) nearest-rank quantile of validation scores.
inline ThresholdSpec anomaly_threshold(const std::vector<double>& val_scores, double anomaly_ratio) {
  if (!(anomaly_ratio > 0 && anomaly_ratio < 1)) throw std::invalid_argument("anomaly ratio must lie in (0, 1)");
  if (val_scores.empty()) throw std::invalid_argument("no validation scores");
  ThresholdSpec s;
  s.anomaly_ratio = anomaly_ratio;
  s.threshold = nearest_rank(val_scores, 1.0 - anomaly_ratio);
  const auto [mn, mx] = std::minmax_element(val_scores.begin(), val_scores.end());
  s.degenerate = *mn == *mx;
  return s;
}

inline std::vector<std::uint8_t> apply_threshold(const std::vector<double>& scores, const ThresholdSpec& spec) {
  std::vector<std::uint8_t> mask(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) mask[i] = scores[i] > spec.threshold ? 1 : 0;
  return mask;
}

}  // namespace medts::tasks
