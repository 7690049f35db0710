#pragma once

#include "medts/core/series.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::baselines {

namespace detail {

inline Index require_channel(const MultivariateSeries& s, const std::string& name) {
  auto c = s.channel_index(name);
  if (!c) throw std::invalid_argument("series has no '" + name + "' channel");
  return *c;
}

inline int max_label(const std::vector<std::vector<int>>& labels) {
  int m = -1;
  for (const auto& l : labels)
    for (int v : l) m = std::max(m, v);
  if (m < 0) throw std::invalid_argument("no training labels");
  return m;
}

}  // namespace detail

/// Expiration wherever flow falls below the threshold.
struct FlowThresholdBaseline {
  std::string flow_channel = "flow";
  double threshold = 0.05;
  int expiration_class = 1;
  int inspiration_class = 0;

  std::vector<int> predict(const MultivariateSeries& s) const {
    const Index c = detail::require_channel(s, flow_channel);
    std::vector<int> out(static_cast<std::size_t>(s.length()));
    for (Index t = 0; t < s.length(); ++t)
      out[static_cast<std::size_t>(t)] = s.values()(t, c) < threshold ? expiration_class : inspiration_class;
    return out;
  }
};

/// Per channel: value, centered window mean and population sd (window clipped at the edges).
inline Matrix point_features(const Matrix& x, Index half_window = 4) {
  const Index T = x.rows(), C = x.cols();
  Matrix f(T, 3 * C);
  for (Index c = 0; c < C; ++c) {
    Vector prefix = Vector::Zero(T + 1), prefix_sq = Vector::Zero(T + 1);
    for (Index t = 0; t < T; ++t) {
      prefix(t + 1) = prefix(t) + x(t, c);
      prefix_sq(t + 1) = prefix_sq(t) + x(t, c) * x(t, c);
    }
    for (Index t = 0; t < T; ++t) {
      const Index lo = std::max<Index>(0, t - half_window), hi = std::min<Index>(T, t + half_window + 1);
      const double n = static_cast<double>(hi - lo);
      const double m = (prefix(hi) - prefix(lo)) / n;
      const double var = std::max(0.0, (prefix_sq(hi) - prefix_sq(lo)) / n - m * m);
      f(t, 3 * c) = x(t, c);
      f(t, 3 * c + 1) = m;
      f(t, 3 * c + 2) = std::sqrt(var);
    }
  }
  return f;
}

/// Point-wise k-nearest-neighbor classifier over standardized point features.
class KnnBaseline {
 public:
  explicit KnnBaseline(Index k = 5, Index half_window = 4) : k_(k), half_(half_window) {
    if (k < 1) throw std::invalid_argument("k must be positive");
  }

  void fit(const std::vector<const MultivariateSeries*>& series, const std::vector<std::vector<int>>& labels) {
    if (series.empty() || series.size() != labels.size()) throw std::invalid_argument("need matching training series and labels");
    Index rows = 0;
    for (std::size_t i = 0; i < series.size(); ++i) {
      if (static_cast<Index>(labels[i].size()) != series[i]->length()) throw std::invalid_argument("label count mismatch");
      rows += series[i]->length();
    }
    if (k_ > rows) throw std::invalid_argument("k exceeds the number of training points");
    const Index D = 3 * series.front()->channels();
    train_.resize(rows, D);
    train_labels_.clear();
    Index r = 0;
    for (std::size_t i = 0; i < series.size(); ++i) {
      const Matrix f = point_features(series[i]->values(), half_);
      if (f.cols() != D) throw std::invalid_argument("training series differ in channel count");
      train_.middleRows(r, f.rows()) = f;
      r += f.rows();
      train_labels_.insert(train_labels_.end(), labels[i].begin(), labels[i].end());
    }
    mean_ = train_.colwise().mean();
    scale_ = ((train_.rowwise() - mean_).array().square().colwise().mean()).sqrt().matrix();
    for (Index d = 0; d < D; ++d)
      if (!(scale_(d) > 1e-12)) scale_(d) = 1.0;
    train_ = (train_.rowwise() - mean_).array().rowwise() / scale_.array();
    train_norm_ = train_.rowwise().squaredNorm();
  }

  std::vector<int> predict(const MultivariateSeries& s) const {
    if (train_.rows() == 0) throw std::logic_error("k-NN baseline used before fit");
    Matrix q = point_features(s.values(), half_);
    if (q.cols() != train_.cols()) throw std::invalid_argument("channel count differs from training");
    q = (q.rowwise() - mean_).array().rowwise() / scale_.array();
    std::vector<int> out(static_cast<std::size_t>(q.rows()));
    const Index chunk = 128;
    std::vector<Index> idx(static_cast<std::size_t>(train_.rows()));
    for (Index start = 0; start < q.rows(); start += chunk) {
      const Index n = std::min(chunk, q.rows() - start);
      const Matrix block = q.middleRows(start, n);
      Matrix d2 = (-2.0 * block * train_.transpose()).rowwise() + train_norm_.transpose();
      for (Index i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = static_cast<Index>(j);
        auto row = d2.row(i);
        std::partial_sort(idx.begin(), idx.begin() + k_, idx.end(), [&](Index a, Index b) {
          return row(a) < row(b) || (row(a) == row(b) && a < b);
        });
        std::map<int, Index> votes;
        for (Index j = 0; j < k_; ++j) ++votes[train_labels_[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])]];
        int best = votes.begin()->first;
        for (const auto& [label, v] : votes)
          if (v > votes[best]) best = label;
        out[static_cast<std::size_t>(start + i)] = best;
      }
    }
    return out;
  }

 private:
  Index k_, half_;
  Matrix train_;
  Vector train_norm_;
  std::vector<int> train_labels_;
  Eigen::RowVectorXd mean_, scale_;
};

/// Gaussian-emission HMM with diagonal covariances, fit by EM with random restarts.
class HmmBaseline {
 public:
  struct Options {
    Index restarts = 10;
    Index max_iter = 100;
    double tol = 1e-6;
    std::uint64_t seed = 0;
  };

  HmmBaseline() = default;
  explicit HmmBaseline(Options o) : opt_(o) {}

  /// The state count is the number of classes in the training labels.
  void fit(const std::vector<const MultivariateSeries*>& series, const std::vector<std::vector<int>>& labels) {
    if (series.empty() || series.size() != labels.size()) throw std::invalid_argument("need matching training series and labels");
    const int K = detail::max_label(labels) + 1;
    std::vector<const Matrix*> obs;
    for (const auto* s : series) obs.push_back(&s->values());
    fit_unsupervised(obs, K);
    // Majority vote of decoded states against the training labels.
    std::vector<std::map<int, Index>> votes(static_cast<std::size_t>(K));
    std::map<int, Index> overall;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      if (static_cast<Index>(labels[i].size()) != obs[i]->rows()) throw std::invalid_argument("label count mismatch");
      const auto states = viterbi(*obs[i]);
      for (std::size_t t = 0; t < states.size(); ++t) {
        ++votes[static_cast<std::size_t>(states[t])][labels[i][t]];
        ++overall[labels[i][t]];
      }
    }
    int fallback = overall.begin()->first;
    for (const auto& [l, v] : overall)
      if (v > overall[fallback]) fallback = l;
    state_class_.assign(static_cast<std::size_t>(K), fallback);
    for (int k = 0; k < K; ++k) {
      const auto& v = votes[static_cast<std::size_t>(k)];
      if (v.empty()) continue;
      int best = v.begin()->first;
      for (const auto& [l, n] : v)
        if (n > v.at(best)) best = l;
      state_class_[static_cast<std::size_t>(k)] = best;
    }
  }

  void fit_unsupervised(const std::vector<const Matrix*>& obs, int K) {
    if (obs.empty() || K < 1) throw std::invalid_argument("HMM needs observations and at least one state");
    const Index D = obs.front()->cols();
    Index N = 0;
    for (const auto* o : obs) {
      if (o->cols() != D) throw std::invalid_argument("observation dimension mismatch");
      N += o->rows();
    }
    if (N < K) throw std::invalid_argument("fewer observations than HMM states");
    Matrix pooled(N, D);
    Index r = 0;
    for (const auto* o : obs) {
      pooled.middleRows(r, o->rows()) = *o;
      r += o->rows();
    }
    const Eigen::RowVectorXd gmean = pooled.colwise().mean();
    Eigen::RowVectorXd gvar = (pooled.rowwise() - gmean).array().square().colwise().mean();
    for (Index d = 0; d < D; ++d)
      if (!(gvar(d) > 1e-12)) gvar(d) = 1.0;
    var_floor_ = 1e-6 * gvar;

    double best_ll = -std::numeric_limits<double>::infinity();
    Params best;
    for (Index rs = 0; rs < opt_.restarts; ++rs) {
      std::mt19937_64 rng(opt_.seed * 1000003ULL + static_cast<std::uint64_t>(rs));
      Params p;
      p.pi = Vector::Constant(K, 1.0 / K);
      p.A = Matrix::Constant(K, K, K > 1 ? 0.1 / (K - 1) : 1.0);
      if (K > 1) p.A.diagonal().setConstant(0.9);
      p.mu.resize(K, D);
      std::uniform_int_distribution<Index> pick(0, N - 1);
      for (int k = 0; k < K; ++k) p.mu.row(k) = pooled.row(pick(rng));
      p.var = gvar.replicate(K, 1);
      double ll = -std::numeric_limits<double>::infinity();
      for (Index it = 0; it < opt_.max_iter; ++it) {
        const double next = em_step(obs, p);
        const bool done = std::abs(next - ll) < opt_.tol * std::max(1.0, std::abs(next));
        ll = next;
        if (done) break;
      }
      if (ll > best_ll) {
        best_ll = ll;
        best = p;
      }
    }
    p_ = best;
    log_likelihood_ = best_ll;
  }

  std::vector<int> viterbi(const Matrix& x) const {
    const Index T = x.rows(), K = p_.mu.rows();
    if (K == 0) throw std::logic_error("HMM used before fit");
    const Matrix lb = log_emission(x, p_);
    const Matrix logA = p_.A.array().max(1e-300).log();
    Matrix delta(T, K);
    Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> back(T, K);
    delta.row(0) = p_.pi.transpose().array().max(1e-300).log().matrix() + lb.row(0);
    for (Index t = 1; t < T; ++t) {
      for (Index j = 0; j < K; ++j) {
        Index arg = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (Index i = 0; i < K; ++i) {
          const double v = delta(t - 1, i) + logA(i, j);
          if (v > best) {
            best = v;
            arg = i;
          }
        }
        delta(t, j) = best + lb(t, j);
        back(t, j) = arg;
      }
    }
    std::vector<int> path(static_cast<std::size_t>(T));
    Index s = 0;
    delta.row(T - 1).maxCoeff(&s);
    for (Index t = T - 1; t >= 0; --t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(s);
      if (t > 0) s = back(t, s);
    }
    return path;
  }

  std::vector<int> predict(const MultivariateSeries& s) const {
    if (state_class_.empty()) throw std::logic_error("HMM baseline used before fit");
    auto states = viterbi(s.values());
    for (auto& v : states) v = state_class_[static_cast<std::size_t>(v)];
    return states;
  }

  double log_likelihood() const { return log_likelihood_; }
  const Matrix& means() const { return p_.mu; }

 private:
  struct Params {
    Vector pi;
    Matrix A, mu, var;
  };

  static Matrix log_emission(const Matrix& x, const Params& p) {
    const Index T = x.rows(), K = p.mu.rows(), D = x.cols();
    Matrix out(T, K);
    for (Index k = 0; k < K; ++k) {
      const double norm = -0.5 * (static_cast<double>(D) * std::log(2 * M_PI) + p.var.row(k).array().log().sum());
      out.col(k) = ((x.rowwise() - p.mu.row(k)).array().square().rowwise() / p.var.row(k).array()).rowwise().sum() * -0.5 + norm;
    }
    return out;
  }

  double em_step(const std::vector<const Matrix*>& obs, Params& p) const {
    const Index K = p.mu.rows(), D = p.mu.cols();
    Vector pi_acc = Vector::Zero(K);
    Matrix a_acc = Matrix::Zero(K, K), mu_acc = Matrix::Zero(K, D), sq_acc = Matrix::Zero(K, D);
    Vector w_acc = Vector::Zero(K);
    double ll = 0;
    for (const auto* xp : obs) {
      const Matrix& x = *xp;
      const Index T = x.rows();
      const Matrix lb = log_emission(x, p);
      Matrix b(T, K);
      Vector shift(T);
      for (Index t = 0; t < T; ++t) {
        shift(t) = lb.row(t).maxCoeff();
        b.row(t) = (lb.row(t).array() - shift(t)).exp();
      }
      Matrix alpha(T, K), beta(T, K);
      Vector c(T);
      alpha.row(0) = p.pi.transpose().cwiseProduct(b.row(0));
      c(0) = alpha.row(0).sum();
      alpha.row(0) /= c(0);
      for (Index t = 1; t < T; ++t) {
        alpha.row(t) = (alpha.row(t - 1) * p.A).cwiseProduct(b.row(t));
        c(t) = alpha.row(t).sum();
        alpha.row(t) /= c(t);
      }
      beta.row(T - 1).setOnes();
      for (Index t = T - 2; t >= 0; --t) {
        beta.row(t) = (p.A * (b.row(t + 1).cwiseProduct(beta.row(t + 1))).transpose()).transpose() / c(t + 1);
      }
      ll += c.array().log().sum() + shift.sum();
      const Matrix gamma = alpha.cwiseProduct(beta);
      pi_acc += gamma.row(0).transpose();
      for (Index t = 0; t + 1 < T; ++t) {
        const Eigen::RowVectorXd nb = b.row(t + 1).cwiseProduct(beta.row(t + 1));
        a_acc += (alpha.row(t).transpose() * nb).cwiseProduct(p.A) / c(t + 1);
      }
      w_acc += gamma.colwise().sum().transpose();
      mu_acc += gamma.transpose() * x;
      sq_acc += gamma.transpose() * x.array().square().matrix();
    }
    p.pi = pi_acc / pi_acc.sum();
    for (Index i = 0; i < K; ++i) {
      const double row = a_acc.row(i).sum();
      if (row > 0) p.A.row(i) = a_acc.row(i) / row;
      const double w = std::max(w_acc(i), 1e-300);
      p.mu.row(i) = mu_acc.row(i) / w;
      p.var.row(i) = (sq_acc.row(i) / w - p.mu.row(i).array().square().matrix()).cwiseMax(var_floor_);
    }
    return ll;
  }

  Options opt_;
  Params p_;
  Eigen::RowVectorXd var_floor_;
  std::vector<int> state_class_;
  double log_likelihood_ = 0;
};

}  // namespace medts::baselines
