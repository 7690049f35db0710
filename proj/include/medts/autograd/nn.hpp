#pragma once

#include "medts/autograd/ops.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace medts::ag {

/// Owns named parameters with stable addresses; iteration is in name order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Matrix value, bool trainable = true) {
    auto [it, inserted] = params_.try_emplace(name, name, std::move(value), trainable);
    if (!inserted) throw std::invalid_argument("duplicate parameter name: " + name);
    return it->second;
  }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<Parameter*> trainable() {
    std::vector<Parameter*> out;
    for (auto& [_, p] : params_)
      if (p.trainable) out.push_back(&p);
    return out;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  Index trainable_count() const {
    Index n = 0;
    for (const auto& [_, p] : params_)
      if (p.trainable) n += p.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Parameter> params_;
};

inline Matrix uniform_init(Index rows, Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline Matrix normal_init(Index rows, Index cols, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sd);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

/// y = x W^T + b with W stored out x in.
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParameterStore& store, const std::string& name, Index in, Index out,
                       std::mt19937_64& rng, bool trainable = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = &store.add(name + ".weight", uniform_init(out, in, bound, rng), trainable);
    l.bias = &store.add(name + ".bias", uniform_init(1, out, bound, rng), trainable);
    return l;
  }

  static Linear bind(ParameterStore& store, const std::string& name) {
    return Linear{&store.at(name + ".weight"), &store.at(name + ".bias")};
  }

  Index in_features() const { return weight->value.cols(); }
  Index out_features() const { return weight->value.rows(); }

  Var operator()(Tape& t, const Var& x) const {
    return add_row(matmul_nt(x, t.param(*weight)), t.param(*bias));
  }
};

// ---- optimizers -------------------------------------------------------------

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step() = 0;
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8, double weight_decay = 0.0)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
    for (auto* p : params_) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() override {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      Matrix g = p.grad;
      if (wd_ > 0) g += wd_ * p.value;
      m_[k] = b1_ * m_[k] + (1 - b1_) * g;
      v_[k] = b2_ * v_[k] + (1 - b2_) * g.cwiseProduct(g);
      p.value.array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
    }
  }

 private:
  std::vector<Parameter*> params_;
  double lr_, b1_, b2_, eps_, wd_;
  int t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Rectified Adam with Lookahead (the "Ranger" combination).
class Ranger : public Optimizer {
 public:
  Ranger(std::vector<Parameter*> params, double lr, double beta1 = 0.95, double beta2 = 0.999,
         double eps = 1e-5, double weight_decay = 0.0, int lookahead_k = 6, double lookahead_alpha = 0.5,
         double sma_threshold = 5.0)
      : params_(std::move(params)),
        lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay),
        k_(lookahead_k), alpha_(lookahead_alpha), sma_threshold_(sma_threshold) {
    for (auto* p : params_) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      slow_.push_back(p->value);
    }
  }

  void step() override {
    ++t_;
    const double b2t = std::pow(b2_, t_);
    const double rho_inf = 2.0 / (1.0 - b2_) - 1.0;
    const double rho_t = rho_inf - 2.0 * t_ * b2t / (1.0 - b2t);
    const double c1 = 1.0 - std::pow(b1_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      Matrix g = p.grad;
      if (wd_ > 0) g += wd_ * p.value;
      m_[k] = b1_ * m_[k] + (1 - b1_) * g;
      v_[k] = b2_ * v_[k] + (1 - b2_) * g.cwiseProduct(g);
      if (rho_t > sma_threshold_) {
        const double r = std::sqrt(((rho_t - 4) * (rho_t - 2) * rho_inf) / ((rho_inf - 4) * (rho_inf - 2) * rho_t));
        p.value.array() -= lr_ * r * (m_[k].array() / c1) / ((v_[k].array() / (1.0 - b2t)).sqrt() + eps_);
      } else {
        p.value.array() -= lr_ * (m_[k].array() / c1);
      }
      if (t_ % k_ == 0) {
        slow_[k] += alpha_ * (p.value - slow_[k]);
        p.value = slow_[k];
      }
    }
  }

 private:
  std::vector<Parameter*> params_;
  double lr_, b1_, b2_, eps_, wd_;
  int k_;
  double alpha_, sma_threshold_;
  int t_ = 0;
  std::vector<Matrix> m_, v_, slow_;
};

}  // namespace medts::ag
