#include "medts/autograd/nn.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

using namespace medts;
using namespace medts::ag;

namespace {

struct Fixture {
  std::mt19937_64 rng{3};
  ParameterStore store;
  Parameter& p(const std::string& name, Index r, Index c) { return store.add(name, normal_init(r, c, 1.0, rng)); }
};

void expect_grad_ok(const std::function<Var(Tape&)>& f, std::vector<Parameter*> ps, double tol = 1e-6) {
  auto r = medts::testing::grad_check(f, ps);
  EXPECT_GT(r.analytic_norm, 0.0);
  EXPECT_LT(r.relative_error, tol);
}

}  // namespace

TEST(Autograd, MatmulAddSoftmaxChain) {
  Fixture fx;
  auto& a = fx.p("a", 4, 3);
  auto& b = fx.p("b", 3, 5);
  auto& r = fx.p("r", 1, 5);
  Matrix target = normal_init(4, 5, 1.0, fx.rng);
  expect_grad_ok(
      [&](Tape& t) {
        Var y = softmax_rows(add_row(matmul(t.param(a), t.param(b)), t.param(r)), true);
        return mse(y, target);
      },
      {&a, &b, &r});
}

TEST(Autograd, LayerNormGeluTransposeReshape) {
  Fixture fx;
  auto& x = fx.p("x", 3, 6);
  auto& g = fx.p("g", 1, 6);
  auto& be = fx.p("be", 1, 6);
  auto& w = fx.p("w", 2, 6);
  std::vector<int> labels{1, 0, 3, 2, 5, 4, 0, 1, 2};
  expect_grad_ok(
      [&](Tape& t) {
        Var y = gelu(layernorm_rows(t.param(x), t.param(g), t.param(be)));
        Var z = matmul_nt(y, t.param(w));          // 3 x 2
        Var zz = reshape(transpose(z), 1, 6);       // 1 x 6
        Var logits = reshape(concat_cols({zz, zz, zz}), 3, 6);
        return cross_entropy_rows(logits, std::vector<int>(labels.begin(), labels.begin() + 3));
      },
      {&x, &g, &be, &w});
}

TEST(Autograd, StructuralOps) {
  Fixture fx;
  auto& a = fx.p("a", 3, 4);
  auto& b = fx.p("b", 3, 4);
  auto& w = fx.p("w", 1, 2);
  auto& r = fx.p("r", 1, 4);
  Matrix target = normal_init(6, 2, 1.0, fx.rng);
  expect_grad_ok(
      [&](Tape& t) {
        Var A = t.param(a), B = t.param(b);
        Var inter = interleave_rows({A, B});                            // 6 x 4
        Var mixed = weighted_sum({A, B}, softmax_rows(t.param(w)));     // 3 x 4
        Var stacked = concat_rows({slice_rows(mixed, 1, 2), slice_rows(inter, 0, 4)});  // 6 x 4
        Var prod = hadamard(mul_row(stacked, t.param(r)), sub(inter, stacked));
        Var rec = reciprocal(add_row(scale(prod, 0.1), t.constant(Matrix::Constant(1, 4, 3.0))));
        return mse(slice_cols(rec, 1, 2), target);
      },
      {&a, &b, &w, &r});
}

TEST(Autograd, BceMatchesClosedForm) {
  Tape t;
  Matrix zero = Matrix::Zero(1, 1), one = Matrix::Ones(1, 1);
  EXPECT_NEAR(bce_with_logits(t.constant(zero), one).value()(0, 0), std::log(2.0), 1e-12);
  Fixture fx;
  auto& x = fx.p("x", 5, 1);
  Matrix y(5, 1);
  y << 1, 0, 0, 1, 1;
  expect_grad_ok([&](Tape& t) { return bce_with_logits(t.param(x), y, 3.0); }, {&x});
}

TEST(Autograd, FrozenParametersReceiveNoGradient) {
  Fixture fx;
  auto& a = fx.p("a", 2, 2);
  auto& frozen = fx.store.add("frozen", Matrix::Ones(2, 2), false);
  Tape t;
  t.backward(mse(matmul(t.param(a), t.param(frozen)), Matrix::Zero(2, 2)));
  EXPECT_GT(a.grad.norm(), 0.0);
  EXPECT_EQ(frozen.grad.norm(), 0.0);
}

TEST(Optimizers, AdamAndRangerMinimizeQuadratic) {
  for (int which = 0; which < 2; ++which) {
    ParameterStore store;
    auto& x = store.add("x", Matrix::Constant(1, 3, 5.0));
    std::unique_ptr<Optimizer> opt;
    if (which == 0) opt = std::make_unique<Adam>(store.trainable(), 0.1);
    else opt = std::make_unique<Ranger>(store.trainable(), 0.1);
    for (int i = 0; i < 1500; ++i) {
      store.zero_grad();
      Tape t;
      t.backward(mse(t.param(x), Matrix::Zero(1, 3)));
      opt->step();
    }
    EXPECT_LT(x.value.norm(), 0.05) << which;
  }
}
