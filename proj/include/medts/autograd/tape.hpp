#pragma once

// Reverse-mode differentiation over row-major matrices.
//
// A Tape records every operation of one forward pass. Nodes created from
// frozen parameters or data are constants and are skipped during backward;
// trainable parameters accumulate their gradient into Parameter::grad.

#include "medts/core/series.hpp"

#include <cassert>
#include <functional>
#include <string>
#include <vector>

namespace medts::ag {

using medts::Matrix;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool is_trainable = true)
      : name(std::move(n)), value(std::move(v)), trainable(is_trainable) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool needs_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var constant(Matrix m) { return push(std::move(m), false, nullptr); }

  /// Caller keeps `m` alive for the tape's lifetime.
  Var constant_ref(const Matrix& m) {
    nodes_.push_back(Node{});
    nodes_.back().ref = &m;
    return Var(this, nodes_.size() - 1);
  }

  Var param(Parameter& p) {
    if (!p.trainable || !grad_enabled_) return constant_ref(p.value);
    nodes_.push_back(Node{});
    auto& n = nodes_.back();
    n.ref = &p.value;
    n.needs_grad = true;
    n.param = &p;
    return Var(this, nodes_.size() - 1);
  }

  Var push(Matrix value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{});
    auto& n = nodes_.back();
    n.value = std::move(value);
    n.needs_grad = needs_grad && grad_enabled_;
    if (n.needs_grad) n.backward = std::move(backward);
    return Var(this, nodes_.size() - 1);
  }

  const Matrix& val(std::size_t id) const {
    const auto& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer of node `id`, allocated on first touch.
  Matrix& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0) {
      const auto& v = val(id);
      n.grad = Matrix::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }

  void backward(const Var& loss) {
    assert(loss.tape() == this);
    const auto& v = val(loss.id());
    if (v.size() != 1) throw std::invalid_argument("backward requires a scalar loss");
    if (!needs_grad(loss.id())) return;
    grad(loss.id()).setOnes();
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) n.param->grad += n.grad;
    }
  }

  /// Forward-only mode: nodes record no closures.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

inline const Matrix& Var::value() const { return tape_->val(id_); }
inline bool Var::needs_grad() const { return tape_->needs_grad(id_); }

}  // namespace medts::ag
