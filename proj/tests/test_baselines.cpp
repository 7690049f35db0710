#include "medts/baselines/baselines.hpp"
#include "medts/ingest/synth.hpp"
#include "medts/metrics/metrics.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace medts;
using namespace medts::baselines;

namespace {

MultivariateSeries single(const std::vector<double>& v, const std::string& name = "x") {
  Matrix m(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
  return MultivariateSeries(m, 50.0, {name});
}

// Two-state chain with emission means +-5 and sd 0.1.
std::pair<MultivariateSeries, std::vector<int>> two_state(std::uint64_t seed, Index T) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0, 0.1);
  std::vector<int> states(static_cast<std::size_t>(T));
  std::vector<double> v(static_cast<std::size_t>(T));
  int s = 0;
  for (Index t = 0; t < T; ++t) {
    if (rng() % 40 == 0) s = 1 - s;
    states[static_cast<std::size_t>(t)] = s;
    v[static_cast<std::size_t>(t)] = (s ? 5.0 : -5.0) + noise(rng);
  }
  return {single(v), states};
}

double accuracy(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ok += a[i] == b[i];
  return static_cast<double>(ok) / static_cast<double>(a.size());
}

MultivariateSeries sinusoid(Index T, Index period, double phase_shift, const std::string& name = "resp") {
  std::vector<double> v(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t)
    v[static_cast<std::size_t>(t)] = std::cos(2 * M_PI * static_cast<double>(t - static_cast<Index>(phase_shift)) / static_cast<double>(period));
  return single(v, name);
}

}  // namespace

TEST(FlowThreshold, Example) {
  const auto s = single({1.0, 0.04, -1.0, 0.06}, "flow");
  EXPECT_EQ(FlowThresholdBaseline{}.predict(s), (std::vector<int>{0, 1, 1, 0}));
  EXPECT_THROW(FlowThresholdBaseline{}.predict(single({1.0}, "pressure")), std::invalid_argument);
}

TEST(FlowThreshold, SyntheticVentilatorIsNearPerfect) {
  ingest::SynthConfig cfg;
  cfg.n_records = 2;
  for (const auto& r : ingest::synth_dataset(cfg)) {
    EXPECT_EQ(FlowThresholdBaseline{}.predict(*r.series), r.annotations.labels);
  }
}

TEST(PointFeatures, WindowStatistics) {
  Matrix x(5, 1);
  x << 1, 2, 3, 4, 5;
  const Matrix f = point_features(x, 1);
  EXPECT_DOUBLE_EQ(f(2, 0), 3.0);
  EXPECT_DOUBLE_EQ(f(2, 1), 3.0);
  EXPECT_NEAR(f(2, 2), std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_DOUBLE_EQ(f(0, 1), 1.5);  // clipped window {1, 2}
  EXPECT_DOUBLE_EQ(f(0, 2), 0.5);
}

TEST(Knn, MemorizesTrainingDataWithKOne) {
  const auto [s, labels] = two_state(1, 400);
  KnnBaseline knn(1);
  knn.fit({&s}, {labels});
  EXPECT_EQ(knn.predict(s), labels);
}

TEST(Knn, Errors) {
  const auto s = single({1, 2, 3});
  KnnBaseline knn(5);
  EXPECT_THROW(knn.fit({&s}, {{0, 1, 0}}), std::invalid_argument);
  EXPECT_THROW(KnnBaseline(0), std::invalid_argument);
  EXPECT_THROW(KnnBaseline(1).predict(s), std::logic_error);
}

TEST(Hmm, WellSeparatedStates) {
  const auto [train, train_labels] = two_state(0, 2000);
  const auto [test, test_labels] = two_state(1, 2000);
  HmmBaseline hmm;
  hmm.fit({&train}, {train_labels});
  EXPECT_GE(accuracy(hmm.predict(test), test_labels), 0.99);
  EXPECT_GE(accuracy(hmm.predict(train), train_labels), 0.99);
}

TEST(Hmm, DeterministicGivenSeed) {
  const auto [s, labels] = two_state(3, 500);
  HmmBaseline a, b;
  a.fit({&s}, {labels});
  b.fit({&s}, {labels});
  EXPECT_EQ(a.predict(s), b.predict(s));
  EXPECT_DOUBLE_EQ(a.log_likelihood(), b.log_likelihood());
}

TEST(Hmm, RecoversEmissionMeans) {
  const auto [s, labels] = two_state(5, 3000);
  HmmBaseline hmm;
  hmm.fit({&s}, {labels});
  std::vector<double> mu{hmm.means()(0, 0), hmm.means()(1, 0)};
  std::sort(mu.begin(), mu.end());
  EXPECT_NEAR(mu[0], -5.0, 0.02);
  EXPECT_NEAR(mu[1], 5.0, 0.02);
}

TEST(PeakBaseline, SinusoidCrests) {
  const auto s = sinusoid(1000, 50, 13);
  PeakBaseline b;
  b.min_distance = 25;
  std::vector<Index> expected;
  for (Index t = 13; t < 999; t += 50) expected.push_back(t);
  EXPECT_EQ(b.predict(s), expected);
}

TEST(PeakBaseline, FitUsesHeuristic) {
  PeakBaseline b;
  b.fit({{0, 50, 100, 150}});
  EXPECT_EQ(*b.min_distance, 50);
  PeakBaseline missing;
  EXPECT_THROW(missing.predict(sinusoid(100, 50, 0)), std::logic_error);
}

TEST(Dtw, IdentityAndWarping) {
  const std::vector<double> a{0, 1, 2, 3, 2, 1}, b{0, 1, 1, 2, 3, 2, 1};
  EXPECT_DOUBLE_EQ(dtw_distance(a.data(), 6, a.data(), 6, 0), 0.0);
  EXPECT_DOUBLE_EQ(dtw_distance(a.data(), 6, b.data(), 7, 2), 0.0);
  const std::vector<double> c{0, 1, 2, 4, 2, 1};
  EXPECT_DOUBLE_EQ(dtw_distance(a.data(), 6, c.data(), 6, 0), 1.0);
}

TEST(TemplateBaseline, ExactTemplatesGiveZeroMae) {
  // Test series tiled by cycles of three lengths; the templates are those cycles.
  std::vector<std::vector<double>> cycles;
  for (Index L : {40, 47, 53}) {
    std::vector<double> c(static_cast<std::size_t>(L));
    for (Index t = 0; t < L; ++t) c[static_cast<std::size_t>(t)] = 0.5 + 0.5 * std::cos(2 * M_PI * static_cast<double>(t) / static_cast<double>(L));
    cycles.push_back(c);
  }
  std::mt19937_64 rng(7);
  std::vector<double> v;
  std::vector<Index> gt;
  for (int k = 0; k < 12; ++k) {
    gt.push_back(static_cast<Index>(v.size()));
    const auto& c = cycles[rng() % 3];
    v.insert(v.end(), c.begin(), c.end());
  }
  const auto s = single(v, "resp");
  TemplateBaseline b("resp");
  b.set_templates(cycles);
  const auto pred = b.predict(s);
  EXPECT_EQ(pred, gt);
  EXPECT_DOUBLE_EQ(metrics::boundary_mae(pred, gt, static_cast<double>(v.size())), 0.0);

  // Fitting on the same tiled series extracts the cycles as templates.
  TemplateBaseline fitted("resp");
  fitted.fit({&s}, {gt});
  EXPECT_EQ(fitted.templates().size(), gt.size() - 1);
  EXPECT_DOUBLE_EQ(metrics::boundary_mae(fitted.predict(s), gt, static_cast<double>(v.size())), 0.0);
}

TEST(TemplateBaseline, Errors) {
  TemplateBaseline b;
  EXPECT_THROW(b.fit({}, {}), std::invalid_argument);
  const auto s = sinusoid(100, 50, 0);
  EXPECT_THROW(b.fit({&s}, {{10}}), std::invalid_argument);
  EXPECT_THROW(b.predict(s), std::logic_error);
}

TEST(ZScore, SingleSpike) {
  std::vector<double> v(100, 0.0);
  v[42] = 10;
  const auto s = single(v);
  ZScoreDetector z(3.0);
  z.fit({&s});
  const auto out = z.detect(s);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(out.mask[i], i == 42) << i;
  EXPECT_EQ(std::max_element(out.scores.begin(), out.scores.end()) - out.scores.begin(), 42);
}

TEST(Quantile, FullRangeFlagsNothing) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> v(300);
  for (auto& x : v) x = g(rng);
  const auto s = single(v);
  QuantileDetector q(0.0, 1.0);
  q.fit({&s});
  const auto out = q.detect(s);
  EXPECT_EQ(std::count(out.mask.begin(), out.mask.end(), 1), 0);
}

TEST(Quantile, FlaggedFractionBound) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 1);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t T = 20 + rng() % 500;
    std::vector<double> v(T);
    for (auto& x : v) x = std::round(g(rng) * 3) / 3;
    const double lo = static_cast<double>(rng() % 30) / 100.0, hi = 1.0 - static_cast<double>(rng() % 30) / 100.0;
    const auto s = single(v);
    QuantileDetector q(lo, hi);
    q.fit({&s});
    const auto out = q.detect(s);
    const double frac = static_cast<double>(std::count(out.mask.begin(), out.mask.end(), 1)) / static_cast<double>(T);
    ASSERT_LE(frac, lo + 1 - hi + 2.0 / static_cast<double>(T));
  }
  EXPECT_THROW(QuantileDetector(0.6, 0.4), std::invalid_argument);
}

TEST(Rolling, FlagsLevelShiftEdgesAndErrors) {
  std::vector<double> v(200, 1.0);
  v[100] = 6.0;
  const auto s = single(v);
  RollingDetector r(11, 2.0);
  r.fit({&s});
  const auto out = r.detect(s);
  EXPECT_EQ(out.mask[100], 1);
  EXPECT_EQ(std::count(out.mask.begin(), out.mask.end(), 1), 1);
  RollingDetector too_long(200, 1.0);
  too_long.fit({&s});
  EXPECT_THROW(too_long.detect(s), std::invalid_argument);
}

TEST(Fft, ReconstructsPureSinusoid) {
  std::vector<double> v(256);
  for (std::size_t t = 0; t < v.size(); ++t) v[t] = 3.0 * std::sin(2 * M_PI * 8.0 * static_cast<double>(t) / 256.0);
  const auto r = fft_reconstruct(v, 1);
  for (std::size_t t = 0; t < v.size(); ++t) EXPECT_NEAR(r[t], v[t], 1e-9);
  EXPECT_THROW(fft_reconstruct(v, 128), std::invalid_argument);
  EXPECT_THROW(fft_reconstruct(v, 0), std::invalid_argument);
}

TEST(Fft, SpikeHasMaximumScore) {
  std::mt19937_64 rng(0);
  std::normal_distribution<double> g(0, 0.01);
  std::vector<double> v(500);
  for (std::size_t t = 0; t < v.size(); ++t) v[t] = std::sin(2 * M_PI * static_cast<double>(t) / 50.0) + g(rng);
  const double sigma = 1.0 / std::sqrt(2.0);
  v[317] += 10 * sigma;
  const auto s = single(v);
  FftDetector f(1, 0.01);
  f.fit({&s});
  const auto out = f.detect(s);
  EXPECT_EQ(std::max_element(out.scores.begin(), out.scores.end()) - out.scores.begin(), 317);
  EXPECT_EQ(out.mask[317], 1);
}

TEST(Dispatch, RunsEveryMethod) {
  for (TaskKind task : {TaskKind::semseg, TaskKind::boundary, TaskKind::anomaly}) {
    ingest::SynthConfig cfg;
    cfg.task = task;
    cfg.n_records = 3;
    cfg.T = 400;
    const auto recs = ingest::synth_dataset(cfg);
    const std::vector<ingest::Record> train(recs.begin(), recs.begin() + 2), test(recs.begin() + 2, recs.end());
    for (const auto& m : BaselineSpec::methods(task)) {
      BaselineSpec spec{task, m, nlohmann::json::object()};
      if (m == "hmm") spec.params = {{"restarts", 2}};
      const auto preds = run_baseline(spec, train, test);
      ASSERT_EQ(preds.size(), 1u) << m;
      const Index T = test[0].series->length();
      if (task == TaskKind::semseg) {
        EXPECT_EQ(static_cast<Index>(preds[0].labels.size()), T) << m;
      }
      if (task == TaskKind::anomaly) {
        EXPECT_EQ(static_cast<Index>(preds[0].anomaly_mask.size()), T) << m;
      }
      // Determinism.
      const auto again = run_baseline(spec, train, test);
      EXPECT_EQ(again[0].labels, preds[0].labels);
      EXPECT_EQ(again[0].boundary_points, preds[0].boundary_points);
      EXPECT_EQ(again[0].scores, preds[0].scores);
    }
  }
}

TEST(Dispatch, RejectsUnknownMethodsAndParams) {
  EXPECT_THROW((BaselineSpec{TaskKind::semseg, "peak", {}}.validate()), std::invalid_argument);
  EXPECT_THROW((BaselineSpec{TaskKind::anomaly, "zscore", {{"kk", 2}}}.validate()), std::invalid_argument);
}
