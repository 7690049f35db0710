#include "medts/encoder/covariate.hpp"
#include "medts/encoder/patch_embed.hpp"
#include "medts/encoder/reprogrammer.hpp"
#include "medts/encoder/revin.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>

using namespace medts;
using namespace medts::encoder;

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double sd = 1.0) { return ag::normal_init(r, c, sd, rng); }

}  // namespace

TEST(Revin, ConstantChannelIsZero) {
  Matrix x(4, 1);
  x << 3, 3, 3, 3;
  const auto [y, st] = revin_normalize(x);
  EXPECT_EQ(y, Matrix::Zero(4, 1));
  EXPECT_EQ(revin_denormalize(y, st), x);
}

TEST(Revin, TwoPointClosedForm) {
  Matrix x(2, 1);
  x << 0, 2;
  const auto [y, st] = revin_normalize(x);
  EXPECT_NEAR(y(0, 0), -1.0, 1e-5);
  EXPECT_NEAR(y(1, 0), 1.0, 1e-5);
  EXPECT_DOUBLE_EQ(st.mean(0), 1.0);
}

TEST(Revin, MomentsAndRoundTripOnRandomWindows) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Index T = 2 + static_cast<Index>(rng() % 300), C = 1 + static_cast<Index>(rng() % 5);
    Matrix x = random_matrix(T, C, rng, 0.5 + static_cast<double>(rng() % 100));
    x.rowwise() += random_matrix(1, C, rng, 50).row(0);
    const auto [y, st] = revin_normalize(x);
    for (Index c = 0; c < C; ++c) {
      EXPECT_LT(std::abs(y.col(c).mean()), 1e-6);
      EXPECT_LT(std::abs((y.col(c).array() - y.col(c).mean()).square().mean() - 1.0), 1e-4);
    }
    const Matrix back = revin_denormalize(y, st);
    EXPECT_LT((back - x).norm() / x.norm(), 1e-5);
  }
}

TEST(Revin, RejectsNonFinite) {
  Matrix x = Matrix::Zero(3, 1);
  x(1, 0) = std::nan("");
  EXPECT_THROW(revin_normalize(x), std::invalid_argument);
}

TEST(PatchEmbed, ZeroPatchGivesBias) {
  std::mt19937_64 rng(2);
  ag::ParameterStore store;
  PatchEmbedding emb(store, 16, 8, rng);
  const auto grid = patch_indices(32, 16, 8);
  ag::Tape t;
  const auto out = emb(t, Matrix::Zero(32, 1), grid);
  ASSERT_EQ(out.size(), 1u);
  for (Index i = 0; i < grid.n_patches; ++i) EXPECT_EQ(out[0].value().row(i), store.at("patch_embed.bias").value.row(0));
}

TEST(PatchEmbed, Linearity) {
  std::mt19937_64 rng(3);
  ag::ParameterStore store;
  PatchEmbedding emb(store, 16, 8, rng);
  const auto grid = patch_indices(48, 16, 8);
  const Matrix x = random_matrix(48, 2, rng);
  const Matrix b = store.at("patch_embed.bias").value;
  for (double alpha : {-2.5, 0.3, 7.0}) {
    ag::Tape t;
    const auto e1 = emb(t, x, grid);
    const auto e2 = emb(t, alpha * x, grid);
    for (std::size_t c = 0; c < 2; ++c) {
      const Matrix lhs = e2[c].value().rowwise() - b.row(0);
      const Matrix rhs = alpha * (e1[c].value().rowwise() - b.row(0));
      EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(PatchEmbed, CountsPerCovariate) {
  std::mt19937_64 rng(4);
  ag::ParameterStore store;
  PatchEmbedding emb(store, 16, 8, rng);
  ag::Tape t;
  const auto out = emb(t, random_matrix(32, 2, rng), patch_indices(32, 16, 8));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].rows() + out[1].rows(), 6);
  EXPECT_EQ(out[0].cols(), 8);
  EXPECT_THROW(emb(t, random_matrix(40, 2, rng), patch_indices(32, 16, 8)), std::invalid_argument);
}

TEST(PatchEmbed, PatchesMatchOffsets) {
  Vector ch = Vector::LinSpaced(20, 0, 19);
  const auto grid = patch_indices(20, 4, 3);
  const Matrix p = extract_patches(ch, grid);
  ASSERT_EQ(p.rows(), 6);
  for (Index i = 0; i < p.rows(); ++i)
    for (Index k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(p(i, k), static_cast<double>(3 * i + k));
}

namespace {

struct ReprogramFixture {
  ag::ParameterStore store;
  std::mt19937_64 rng;
  Reprogrammer rep;
  Matrix table_t;

  ReprogramFixture(ReprogrammerConfig cfg, std::uint64_t seed)
      : rng(seed), rep(store, cfg, rng), table_t(random_matrix(cfg.d_model, cfg.vocab, rng)) {}
};

}  // namespace

TEST(Reprogrammer, SinglePrototypeReturnsItsValue) {
  ReprogramFixture f({.d_in = 6, .d_model = 5, .vocab = 10, .n_proto = 1, .n_heads = 2, .d_head = 3}, 5);
  ag::Tape t;
  ReprogramTrace trace;
  f.rep.attend(t, t.constant(random_matrix(7, 6, f.rng)), f.rep.prototypes(t, f.table_t), &trace);
  ASSERT_EQ(trace.head_outputs.size(), 2u);
  for (std::size_t h = 0; h < 2; ++h) {
    for (Index i = 0; i < 7; ++i) EXPECT_LT((trace.head_outputs[h].row(i) - trace.values[h].row(0)).norm(), 1e-12);
  }
}

TEST(Reprogrammer, IdenticalPatchesIdenticalOutputs) {
  ReprogramFixture f({.d_in = 6, .d_model = 5, .vocab = 10, .n_proto = 4, .n_heads = 2, .d_head = 3}, 6);
  Matrix x(3, 6);
  const Matrix row = random_matrix(1, 6, f.rng);
  x << row, row, row;
  ag::Tape t;
  const Matrix y = f.rep.attend(t, t.constant(x), f.rep.prototypes(t, f.table_t)).value();
  EXPECT_EQ(y.row(0), y.row(1));
  EXPECT_EQ(y.row(1), y.row(2));
  EXPECT_EQ(y.cols(), 5);
}

TEST(Reprogrammer, OutputsInConvexHullOfValues) {
  ReprogramFixture f({.d_in = 8, .d_model = 12, .vocab = 40, .n_proto = 8, .n_heads = 1, .d_head = 12}, 7);
  ag::Tape t;
  ReprogramTrace trace;
  f.rep.attend(t, t.constant(random_matrix(20, 8, f.rng, 3.0)), f.rep.prototypes(t, f.table_t), &trace);
  const Matrix& V = trace.values[0];  // 8 x d_head
  for (Index i = 0; i < 20; ++i) {
    const Vector y = trace.head_outputs[0].row(i).transpose();
    // Least-squares weights over the 8 value vectors.
    const Vector w = V.transpose().colPivHouseholderQr().solve(y);
    EXPECT_LT((V.transpose() * w - y).norm(), 1e-5);
    EXPECT_NEAR(w.sum(), 1.0, 1e-6);
    EXPECT_GE(w.minCoeff(), -1e-6);
  }
}

TEST(Reprogrammer, GradientCheckToyConfiguration) {
  ReprogramFixture f({.d_in = 4, .d_model = 4, .vocab = 6, .n_proto = 2, .n_heads = 2, .d_head = 2}, 8);
  ag::Parameter patches("patches", random_matrix(5, 4, f.rng), true);
  const Matrix target = random_matrix(5, 4, f.rng);
  std::vector<ag::Parameter*> params = f.store.trainable();
  params.push_back(&patches);
  const auto r = medts::testing::grad_check(
      [&](ag::Tape& t) { return ag::mse(f.rep.attend(t, t.param(patches), f.rep.prototypes(t, f.table_t)), target); },
      params);
  EXPECT_GT(r.analytic_norm, 0.0);
  EXPECT_LT(r.relative_error, 1e-4);
}

TEST(Reprogrammer, RejectsEmptyBank) {
  ag::ParameterStore store;
  std::mt19937_64 rng(0);
  EXPECT_THROW(Reprogrammer(store, {.n_proto = 0}, rng), std::invalid_argument);
}

TEST(Covariate, UnweightedAverageOfIdenticalIsIdentity) {
  std::mt19937_64 rng(9);
  ag::Tape t;
  const Matrix e = random_matrix(4, 3, rng);
  const auto fused = fuse_covariates({t.constant(e), t.constant(e)}, CovariateStrategy::average_unweighted);
  ASSERT_EQ(fused.sequences.size(), 1u);
  EXPECT_LT((fused.sequences[0].value() - e).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Covariate, InterleaveIsPatchMajor) {
  ag::Tape t;
  std::vector<ag::Var> xs;
  for (int c = 0; c < 3; ++c) {
    Matrix m(2, 1);
    m << 10 * 1 + c, 10 * 2 + c;  // value encodes (patch, covariate)
    xs.push_back(t.constant(m));
  }
  const auto fused = fuse_covariates(xs, CovariateStrategy::interleave);
  const Matrix& y = fused.sequences[0].value();
  ASSERT_EQ(y.rows(), 6);
  const double want[] = {10, 11, 12, 20, 21, 22};
  for (Index i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(y(i, 0), want[i]);
}

TEST(Covariate, WeightedAverageAtSimplexVertex) {
  std::mt19937_64 rng(10);
  ag::Tape t;
  const Matrix a = random_matrix(5, 4, rng), b = random_matrix(5, 4, rng);
  Matrix w(1, 2);
  w << 1, 0;
  const ag::Var wv = t.constant(w);
  const auto fused = fuse_covariates({t.constant(a), t.constant(b)}, CovariateStrategy::average_weighted, &wv);
  EXPECT_EQ(fused.sequences[0].value(), a);
}

TEST(Covariate, SequenceLengthContract) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Index Np = 1 + static_cast<Index>(rng() % 10), C = 1 + static_cast<Index>(rng() % 5);
    ag::Tape t;
    std::vector<ag::Var> xs;
    for (Index c = 0; c < C; ++c) xs.push_back(t.constant(random_matrix(Np, 3, rng)));
    const ag::Var w = t.constant(Matrix::Constant(1, C, 1.0 / static_cast<double>(C)));
    EXPECT_EQ(fuse_covariates(xs, CovariateStrategy::average_weighted, &w).sequences[0].rows(), Np);
    EXPECT_EQ(fuse_covariates(xs, CovariateStrategy::average_unweighted).sequences[0].rows(), Np);
    EXPECT_EQ(fuse_covariates(xs, CovariateStrategy::interleave).sequences[0].rows(), Np * C);
    const auto ind = fuse_covariates(xs, CovariateStrategy::independent);
    EXPECT_EQ(static_cast<Index>(ind.sequences.size()), C);
    EXPECT_TRUE(ind.average_outputs);
    for (const auto& s : ind.sequences) EXPECT_EQ(s.rows(), Np);
    const auto cat = concatenate_covariates(xs);
    EXPECT_EQ(cat.rows(), Np);
    EXPECT_EQ(cat.cols(), 3 * C);
    EXPECT_EQ(fuse_covariates({cat}, CovariateStrategy::concatenate).sequences[0].rows(), Np);
  }
}

TEST(Covariate, MismatchedPatchCountsRejected) {
  ag::Tape t;
  EXPECT_THROW(fuse_covariates({t.constant(Matrix::Zero(3, 2)), t.constant(Matrix::Zero(4, 2))},
                               CovariateStrategy::interleave),
               std::invalid_argument);
}

TEST(Covariate, WeightsStayOnSimplexUnderOptimization) {
  std::mt19937_64 rng(12);
  ag::ParameterStore store;
  CovariateWeights cw(store, 4);
  ag::Adam opt(store.trainable(), 0.5);
  const Matrix target = random_matrix(6, 3, rng);
  std::vector<Matrix> xs;
  for (int c = 0; c < 4; ++c) xs.push_back(random_matrix(6, 3, rng));
  for (int step = 0; step < 100; ++step) {
    store.zero_grad();
    ag::Tape t;
    std::vector<ag::Var> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x + random_matrix(6, 3, rng, 0.5)));
    const ag::Var w = cw(t);
    t.backward(ag::mse(fuse_covariates(vs, CovariateStrategy::average_weighted, &w).sequences[0], target));
    opt.step();
    const Matrix wv = cw.weights();
    EXPECT_GE(wv.minCoeff(), 0.0);
    EXPECT_NEAR(wv.sum(), 1.0, 1e-12);
  }
  EXPECT_GT((cw.weights().array() - 0.25).abs().maxCoeff(), 1e-3);
}

TEST(Covariate, StrategyNamesRoundTrip) {
  ASSERT_EQ(all_strategies().size(), 5u);
  for (auto s : all_strategies()) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("stack"), std::invalid_argument);
  EXPECT_EQ(reprogrammer_input_width(CovariateStrategy::concatenate, 8, 3), 24);
  EXPECT_EQ(reprogrammer_input_width(CovariateStrategy::interleave, 8, 3), 8);
}
