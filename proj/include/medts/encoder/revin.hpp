#pragma once

// Reversible instance normalization: per-window, per-channel standardization
// whose statistics are kept so predictions can be mapped back to signal units.

#include "medts/core/series.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace medts::encoder {

struct RevinState {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stdev;  // sqrt(population variance + eps)
  double eps = 1e-5;
};

inline std::pair<Matrix, RevinState> revin_normalize(const Eigen::Ref<const Matrix>& window, double eps = 1e-5) {
  if (window.rows() < 1 || window.cols() < 1) throw std::invalid_argument("empty window");
  if (!window.allFinite()) throw std::invalid_argument("non-finite input to normalization");
  RevinState st;
  st.eps = eps;
  st.mean = window.colwise().mean();
  st.stdev.resize(window.cols());
  Matrix out(window.rows(), window.cols());
  for (Index c = 0; c < window.cols(); ++c) {
    auto col = window.col(c);
    const bool constant = (col.array() == col(0)).all();
    if (constant) st.mean(c) = col(0);
    const double var = constant ? 0.0 : (col.array() - st.mean(c)).square().mean();
    st.stdev(c) = std::sqrt(var + eps);
    if (constant) {
      out.col(c).setZero();
    } else {
      out.col(c) = (col.array() - st.mean(c)) / st.stdev(c);
    }
  }
  return {std::move(out), std::move(st)};
}

inline Matrix revin_denormalize(const Eigen::Ref<const Matrix>& normalized, const RevinState& st) {
  if (normalized.cols() != st.mean.size()) throw std::invalid_argument("channel count mismatch in denormalize");
  Matrix out = (normalized.array().rowwise() * st.stdev.array()).rowwise() + st.mean.array();
  return out;
}

}  // namespace medts::encoder
