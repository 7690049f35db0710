#pragma once

#include "medts/autograd/tape.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace medts::ag {

namespace detail {

inline void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands recorded on different tapes");
}

inline bool any_grad(const std::vector<Var>& xs) {
  for (const auto& x : xs)
    if (x.needs_grad()) return true;
  return false;
}

inline void check_shape(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + what);
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.cols() == b.rows(), "matmul");
  Tape& t = *a.tape();
  const auto ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), a.needs_grad() || b.needs_grad(), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.val(ib).transpose();
    if (t.needs_grad(ib)) t.grad(ib).noalias() += t.val(ia).transpose() * g;
  });
}

/// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.cols() == b.cols(), "matmul_nt");
  Tape& t = *a.tape();
  const auto ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value().transpose();
  return t.push(std::move(out), a.needs_grad() || b.needs_grad(), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.val(ib);
    if (t.needs_grad(ib)) t.grad(ib).noalias() += g.transpose() * t.val(ia);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape& t = *a.tape();
  const auto ia = a.id(), ib = b.id();
  Matrix out = a.value() + b.value();
  return t.push(std::move(out), a.needs_grad() || b.needs_grad(), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) += g;
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Tape& t = *a.tape();
  const auto ia = a.id(), ib = b.id();
  Matrix out = a.value() - b.value();
  return t.push(std::move(out), a.needs_grad() || b.needs_grad(), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) -= g;
  });
}

/// a + r with the 1 x n row r broadcast over rows.
inline Var add_row(const Var& a, const Var& r) {
  detail::check_same_tape(a, r);
  detail::check_shape(r.rows() == 1 && r.cols() == a.cols(), "add_row");
  Tape& t = *a.tape();
  const auto ia = a.id(), ir = r.id();
  Matrix out = a.value().rowwise() + r.value().row(0);
  return t.push(std::move(out), a.needs_grad() || r.needs_grad(), [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ir)) t.grad(ir) += g.colwise().sum();
  });
}

/// a .* r with the 1 x n row r broadcast over rows.
inline Var mul_row(const Var& a, const Var& r) {
  detail::check_same_tape(a, r);
  detail::check_shape(r.rows() == 1 && r.cols() == a.cols(), "mul_row");
  Tape& t = *a.tape();
  const auto ia = a.id(), ir = r.id();
  Matrix out = a.value().array().rowwise() * r.value().row(0).array();
  return t.push(std::move(out), a.needs_grad() || r.needs_grad(), [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).array() += g.array().rowwise() * t.val(ir).row(0).array();
    if (t.needs_grad(ir)) t.grad(ir) += g.cwiseProduct(t.val(ia)).colwise().sum();
  });
}

inline Var hadamard(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard");
  Tape& t = *a.tape();
  const auto ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), a.needs_grad() || b.needs_grad(), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g.cwiseProduct(t.val(ib));
    if (t.needs_grad(ib)) t.grad(ib) += g.cwiseProduct(t.val(ia));
  });
}

inline Var scale(const Var& a, double s) {
  Tape& t = *a.tape();
  const auto ia = a.id();
  Matrix out = a.value() * s;
  return t.push(std::move(out), a.needs_grad(), [ia, s](Tape& t, std::size_t self) {
    t.grad(ia) += s * t.grad(self);
  });
}

inline Var reciprocal(const Var& a) {
  Tape& t = *a.tape();
  const auto ia = a.id();
  Matrix out = a.value().cwiseInverse();
  return t.push(std::move(out), a.needs_grad(), [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.val(self);
    t.grad(ia).array() -= t.grad(self).array() * y.array().square();
  });
}

/// tanh-approximated GELU, as used by GPT-2.
inline Var gelu(const Var& a) {
  Tape& t = *a.tape();
  const auto ia = a.id();
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v)));
  }
  return t.push(std::move(out), a.needs_grad(), [ia](Tape& t, std::size_t self) {
    const Matrix& x = t.val(ia);
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(ia);
    for (Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double th = std::tanh(c * (v + k * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * c * (1.0 + 3.0 * k * v * v);
      gx.data()[i] += g.data()[i] * d;
    }
  });
}

/// Row-wise softmax. With `causal`, entry (i, j) is masked when j > i + (cols - rows).
inline Var softmax_rows(const Var& a, bool causal = false) {
  Tape& t = *a.tape();
  const auto ia = a.id();
  const Matrix& x = a.value();
  const Index rows = x.rows(), cols = x.cols();
  const Index shift = cols - rows;
  Matrix out = Matrix::Zero(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Index limit = causal ? std::min(cols, i + shift + 1) : cols;
    if (limit <= 0) continue;
    const double mx = x.row(i).head(limit).maxCoeff();
    double sum = 0.0;
    for (Index j = 0; j < limit; ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      sum += out(i, j);
    }
    out.row(i).head(limit) /= sum;
  }
  return t.push(std::move(out), a.needs_grad(), [ia](Tape& t, std::size_t self) {
    const Matrix& y = t.val(self);
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(ia);
    for (Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      gx.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
    }
  });
}

/// Per-row layer normalization with affine gamma/beta rows.
inline Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  detail::check_same_tape(x, gamma);
  detail::check_same_tape(x, beta);
  detail::check_shape(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 &&
                          beta.cols() == x.cols(),
                      "layernorm_rows");
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  const Index n = xv.rows(), d = xv.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool needs = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
  return t.push(std::move(out), needs,
                [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  if (t.needs_grad(ig)) t.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
                  if (t.needs_grad(ib)) t.grad(ib) += g.colwise().sum();
                  if (t.needs_grad(ix)) {
                    const auto& gam = t.val(ig);
                    Matrix& gx = t.grad(ix);
                    for (Index i = 0; i < g.rows(); ++i) {
                      Eigen::RowVectorXd dxhat = g.row(i).cwiseProduct(gam.row(0));
                      const double m1 = dxhat.mean();
                      const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
                      gx.row(i).array() += inv_std(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2);
                    }
                  }
                });
}

inline Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows of nothing");
  Tape& t = *xs.front().tape();
  Index rows = 0;
  const Index cols = xs.front().cols();
  for (const auto& x : xs) {
    detail::check_same_tape(xs.front(), x);
    detail::check_shape(x.cols() == cols, "concat_rows");
    rows += x.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> parts;
  Index r = 0;
  for (const auto& x : xs) {
    out.middleRows(r, x.rows()) = x.value();
    parts.emplace_back(x.id(), r);
    r += x.rows();
  }
  return t.push(std::move(out), detail::any_grad(xs), [parts](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (const auto& [id, off] : parts) {
      if (t.needs_grad(id)) t.grad(id) += g.middleRows(off, t.val(id).rows());
    }
  });
}

inline Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols of nothing");
  Tape& t = *xs.front().tape();
  Index cols = 0;
  const Index rows = xs.front().rows();
  for (const auto& x : xs) {
    detail::check_same_tape(xs.front(), x);
    detail::check_shape(x.rows() == rows, "concat_cols");
    cols += x.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> parts;
  Index c = 0;
  for (const auto& x : xs) {
    out.middleCols(c, x.cols()) = x.value();
    parts.emplace_back(x.id(), c);
    c += x.cols();
  }
  return t.push(std::move(out), detail::any_grad(xs), [parts](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (const auto& [id, off] : parts) {
      if (t.needs_grad(id)) t.grad(id) += g.middleCols(off, t.val(id).cols());
    }
  });
}

inline Var slice_rows(const Var& a, Index start, Index count) {
  detail::check_shape(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows");
  Tape& t = *a.tape();
  const auto ia = a.id();
  Matrix out = a.value().middleRows(start, count);
  return t.push(std::move(out), a.needs_grad(), [ia, start, count](Tape& t, std::size_t self) {
    t.grad(ia).middleRows(start, count) += t.grad(self);
  });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
  detail::check_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
  Tape& t = *a.tape();
  const auto ia = a.id();
  Matrix out = a.value().middleCols(start, count);
  return t.push(std::move(out), a.needs_grad(), [ia, start, count](Tape& t, std::size_t self) {
    t.grad(ia).middleCols(start, count) += t.grad(self);
  });
}

inline Var transpose(const Var& a) {
  Tape& t = *a.tape();
  const auto ia = a.id();
  Matrix out = a.value().transpose();
  return t.push(std::move(out), a.needs_grad(), [ia](Tape& t, std::size_t self) {
    t.grad(ia) += t.grad(self).transpose();
  });
}

/// Row-major reshape; element order is preserved.
inline Var reshape(const Var& a, Index rows, Index cols) {
  detail::check_shape(rows * cols == a.value().size(), "reshape");
  Tape& t = *a.tape();
  const auto ia = a.id();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return t.push(std::move(out), a.needs_grad(), [ia](Tape& t, std::size_t self) {
    Matrix& gx = t.grad(ia);
    gx += Eigen::Map<const Matrix>(t.grad(self).data(), gx.rows(), gx.cols());
  });
}

/// Patch-major interleave: output row p*C + c is row p of xs[c].
inline Var interleave_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("interleave_rows of nothing");
  Tape& t = *xs.front().tape();
  const Index C = static_cast<Index>(xs.size());
  const Index n = xs.front().rows(), d = xs.front().cols();
  for (const auto& x : xs) {
    detail::check_same_tape(xs.front(), x);
    detail::check_shape(x.rows() == n && x.cols() == d, "interleave_rows");
  }
  Matrix out(n * C, d);
  for (Index p = 0; p < n; ++p)
    for (Index c = 0; c < C; ++c) out.row(p * C + c) = xs[static_cast<std::size_t>(c)].value().row(p);
  std::vector<std::size_t> ids;
  for (const auto& x : xs) ids.push_back(x.id());
  return t.push(std::move(out), detail::any_grad(xs), [ids, n, C](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (Index c = 0; c < C; ++c) {
      const auto id = ids[static_cast<std::size_t>(c)];
      if (!t.needs_grad(id)) continue;
      Matrix& gx = t.grad(id);
      for (Index p = 0; p < n; ++p) gx.row(p) += g.row(p * C + c);
    }
  });
}

/// sum_c w(0, c) * xs[c] for a 1 x C weight row.
inline Var weighted_sum(const std::vector<Var>& xs, const Var& w) {
  if (xs.empty()) throw std::invalid_argument("weighted_sum of nothing");
  detail::check_shape(w.rows() == 1 && w.cols() == static_cast<Index>(xs.size()), "weighted_sum");
  Tape& t = *w.tape();
  const Index r = xs.front().rows(), c = xs.front().cols();
  Matrix out = Matrix::Zero(r, c);
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    detail::check_same_tape(w, xs[k]);
    detail::check_shape(xs[k].rows() == r && xs[k].cols() == c, "weighted_sum");
    out += w.value()(0, static_cast<Index>(k)) * xs[k].value();
    ids.push_back(xs[k].id());
  }
  const auto iw = w.id();
  return t.push(std::move(out), detail::any_grad(xs) || w.needs_grad(), [ids, iw](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const double wk = t.val(iw)(0, static_cast<Index>(k));
      if (t.needs_grad(ids[k])) t.grad(ids[k]) += wk * g;
      if (t.needs_grad(iw)) t.grad(iw)(0, static_cast<Index>(k)) += g.cwiseProduct(t.val(ids[k])).sum();
    }
  });
}

inline Var mean_of(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_of nothing");
  Tape& t = *xs.front().tape();
  Matrix w = Matrix::Constant(1, static_cast<Index>(xs.size()), 1.0 / static_cast<double>(xs.size()));
  return weighted_sum(xs, t.constant(std::move(w)));
}

// ---- losses (all return 1 x 1) -------------------------------------------

/// Mean binary cross-entropy on logits.
inline Var bce_with_logits(const Var& logits, const Matrix& targets, double pos_weight = 1.0) {
  detail::check_shape(logits.rows() == targets.rows() && logits.cols() == targets.cols(), "bce_with_logits");
  Tape& t = *logits.tape();
  const Matrix& x = logits.value();
  const double n = static_cast<double>(x.size());
  double loss = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i], y = targets.data()[i];
    // log(1 + exp(-|v|)) + max(v, 0) is log(1 + exp(v)) computed stably.
    const double softplus_pos = std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0);  // -log sigmoid(-v)
    const double softplus_neg = softplus_pos - v;                                       // -log sigmoid(v)
    loss += pos_weight * y * softplus_neg + (1.0 - y) * softplus_pos;
  }
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  const auto ix = logits.id();
  return t.push(std::move(out), logits.needs_grad(), [ix, targets, pos_weight, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    const Matrix& x = t.val(ix);
    Matrix& gx = t.grad(ix);
    for (Index i = 0; i < x.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x.data()[i]));
      const double y = targets.data()[i];
      gx.data()[i] += g * (-(pos_weight * y) * (1.0 - s) + (1.0 - y) * s) / n;
    }
  });
}

/// Mean softmax cross-entropy of each row against an integer class label.
inline Var cross_entropy_rows(const Var& logits, const std::vector<int>& labels) {
  detail::check_shape(logits.rows() == static_cast<Index>(labels.size()), "cross_entropy_rows");
  Tape& t = *logits.tape();
  const Matrix& x = logits.value();
  const Index n = x.rows(), k = x.cols();
  Matrix prob(n, k);
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw std::out_of_range("label id outside class range");
    const double mx = x.row(i).maxCoeff();
    prob.row(i) = (x.row(i).array() - mx).exp();
    const double z = prob.row(i).sum();
    prob.row(i) /= z;
    loss += -(x(i, y) - mx - std::log(z));
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(n);
  const auto ix = logits.id();
  return t.push(std::move(out), logits.needs_grad(),
                [ix, labels, prob = std::move(prob)](Tape& t, std::size_t self) {
                  const double g = t.grad(self)(0, 0) / static_cast<double>(prob.rows());
                  Matrix d = prob;
                  for (Index i = 0; i < d.rows(); ++i) d(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
                  t.grad(ix) += g * d;
                });
}

inline Var mse(const Var& pred, const Matrix& target) {
  detail::check_shape(pred.rows() == target.rows() && pred.cols() == target.cols(), "mse");
  Tape& t = *pred.tape();
  const double n = static_cast<double>(target.size());
  Matrix out(1, 1);
  out(0, 0) = (pred.value() - target).squaredNorm() / n;
  const auto ip = pred.id();
  return t.push(std::move(out), pred.needs_grad(), [ip, target, n](Tape& t, std::size_t self) {
    t.grad(ip) += (2.0 * t.grad(self)(0, 0) / n) * (t.val(ip) - target);
  });
}

}  // namespace medts::ag
