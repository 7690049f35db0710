#pragma once

#include "medts/autograd/ops.hpp"

#include <stdexcept>
#include <vector>

namespace medts::tasks {

/// K = 1: class 1 iff sigmoid(raw) > 0.5. K >= 2: argmax, ties to the lowest class.
inline std::vector<int> semseg_decide(const Matrix& raw) {
  if (raw.cols() < 1) throw std::invalid_argument("raw predictions need at least one column");
  if (!raw.allFinite()) throw std::invalid_argument("non-finite raw predictions");
  std::vector<int> out(static_cast<std::size_t>(raw.rows()));
  for (Index i = 0; i < raw.rows(); ++i) {
    if (raw.cols() == 1) {
      out[static_cast<std::size_t>(i)] = raw(i, 0) > 0.0 ? 1 : 0;
      continue;
    }
    Index best = 0;
    for (Index k = 1; k < raw.cols(); ++k)
      if (raw(i, k) > raw(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

/// Mean BCE (K = 1) or mean cross-entropy (K >= 2).
inline ag::Var semseg_loss(const ag::Var& raw, const std::vector<int>& labels) {
  if (raw.rows() != static_cast<Index>(labels.size())) throw std::invalid_argument("label count does not match predictions");
  if (raw.cols() == 1) {
    Matrix target(raw.rows(), 1);
    for (Index i = 0; i < raw.rows(); ++i) {
      const int l = labels[static_cast<std::size_t>(i)];
      if (l != 0 && l != 1) throw std::out_of_range("binary segmentation label must be 0 or 1");
      target(i, 0) = l;
    }
    return ag::bce_with_logits(raw, target);
  }
  return ag::cross_entropy_rows(raw, labels);
}

}  // namespace medts::tasks
