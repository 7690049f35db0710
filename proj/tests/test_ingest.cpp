#include "medts/ingest/record_io.hpp"
#include "medts/ingest/resample.hpp"
#include "medts/ingest/split.hpp"
#include "medts/ingest/synth.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace medts;
using namespace medts::ingest;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "medts_test_ingest";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const auto va = Eigen::Map<const Vector>(a.data(), static_cast<Index>(a.size()));
  const auto vb = Eigen::Map<const Vector>(b.data(), static_cast<Index>(b.size()));
  const Vector ca = va.array() - va.mean(), cb = vb.array() - vb.mean();
  return ca.dot(cb) / (ca.norm() * cb.norm());
}

}  // namespace

TEST(LoadRecord, CsvThreeColumnsHundredRows) {
  const auto path = scratch("r3.csv");
  std::ostringstream os;
  os << "fs=125,features=a;b;c\n";
  for (int t = 0; t < 100; ++t) os << t << "," << 0.5 * t << "," << -t << "\n";
  write_text(path, os.str());
  const Record r = load_record(path);
  EXPECT_EQ(r.series->length(), 100);
  EXPECT_EQ(r.series->channels(), 3);
  EXPECT_DOUBLE_EQ(r.series->fs(), 125.0);
  EXPECT_EQ(r.series->feature_names(), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_DOUBLE_EQ(r.series->values()(10, 1), 5.0);
}

TEST(LoadRecord, AnnotationOutOfRange) {
  const auto path = scratch("oor.csv");
  std::ostringstream os;
  os << "fs=125,features=x\n";
  for (int t = 0; t < 100; ++t) os << t << "\n";
  write_text(path, os.str());
  write_text(scratch("oor.ann"), "kind=boundary_points\n5\n100\n");
  try {
    load_record(path);
    FAIL() << "expected an error";
  } catch (const std::out_of_range& e) {
    EXPECT_STREQ(e.what(), "annotation out of range");
  }
}

TEST(LoadRecord, NonMonotonicAnnotations) {
  const auto path = scratch("nm.csv");
  write_text(path, "fs=10,features=x\n1\n2\n3\n4\n5\n6\n7\n8\n9\n10\n11\n12\n13\n14\n");
  write_text(scratch("nm.ann"), "kind=boundary_points\n12\n7\n");
  try {
    load_record(path);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "non-monotonic annotations");
  }
}

TEST(LoadRecord, MalformedHeader) {
  const auto path = scratch("bad.csv");
  write_text(path, "hello\n1\n");
  EXPECT_THROW(load_record(path), std::runtime_error);
  write_text(path, "fs=10\n1\n");
  EXPECT_THROW(load_record(path), std::runtime_error);
  write_text(path, "fs=10,features=a;b\n1\n");
  EXPECT_THROW(load_record(path), std::runtime_error);
}

TEST(LoadRecord, RoundTripWithSidecars) {
  SynthConfig cfg;
  cfg.task = TaskKind::semseg;
  cfg.n_records = 1;
  cfg.T = 300;
  cfg.noise_sd = 0.01;
  const Record r = synth_dataset(cfg).front();
  const auto stem = scratch("rt");
  save_record(stem, r);
  const Record back = load_record(stem.string() + ".csv");
  EXPECT_EQ(back.id, "rt");
  ASSERT_EQ(back.series->length(), 300);
  EXPECT_LT((back.series->values() - r.series->values()).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_EQ(back.annotations.kind, AnnotationKind::point_labels);
  EXPECT_EQ(back.annotations.labels, r.annotations.labels);
  EXPECT_EQ(back.patient, r.patient);
  ASSERT_EQ(back.low_freq.size(), 1u);
  EXPECT_EQ(back.low_freq[0].values, r.low_freq[0].values);
}

TEST(LoadRecord, PointLabelsPerPointAndRunForms) {
  write_text(scratch("pl1.ann"), "kind=point_labels\n0\n0\n1\n1\n2\n");
  write_text(scratch("pl2.ann"), "kind=point_labels\n0,0\n2,1\n4,2\n");
  const auto a = read_annotations(scratch("pl1.ann"), 5);
  const auto b = read_annotations(scratch("pl2.ann"), 5);
  EXPECT_EQ(a.labels, (std::vector<int>{0, 0, 1, 1, 2}));
  EXPECT_EQ(b.labels, a.labels);
  EXPECT_THROW(read_annotations(scratch("pl1.ann"), 6), std::invalid_argument);
}

TEST(LoadRecord, WfdbLikeTextExport) {
  const auto path = scratch("100.csv");
  std::ostringstream os;
  os << "'Elapsed time','MLII','V5'\n'hh:mm:ss.mmm','mV','mV'\n";
  for (int t = 0; t < 361; ++t) os << t / 360.0 << "," << std::sin(t * 0.1) << "," << 0.1 << "\n";
  write_text(path, os.str());
  write_text(scratch("100.txt"),
             "      Time   Sample #  Type  Sub Chan  Num\tAux\n"
             "    0:00.050       18     N    0    0    0\n"
             "    0:00.100       36     +    0    0    0\n"
             "    0:00.500      180     V    0    0    0\n");
  const Record r = load_record(path, RecordFormat::wfdb_like, AnnotationKind::anomaly_points);
  EXPECT_EQ(r.series->length(), 361);
  EXPECT_NEAR(r.series->fs(), 360.0, 1e-6);
  EXPECT_EQ(r.series->feature_names(), (std::vector<std::string>{"MLII", "V5"}));
  EXPECT_EQ(r.annotations.points, (std::vector<Index>{180}));
  const auto beats = annotations_from_wfdb(read_wfdb_annotations(scratch("100.txt")), AnnotationKind::boundary_points, 361);
  EXPECT_EQ(beats.points, (std::vector<Index>{18, 180}));
}

TEST(Delineation, WaveRunsBecomeClasses) {
  std::vector<WfdbAnnotation> anns{{2, "("}, {3, "p"}, {4, ")"}, {6, "("}, {7, "N"}, {8, ")"}};
  const auto labels = delineation_labels(anns, 10);
  EXPECT_EQ(labels, (std::vector<int>{3, 3, 0, 0, 0, 3, 1, 1, 1, 3}));
}

TEST(Downsample, LengthArithmetic) {
  MultivariateSeries s(Matrix::Random(360, 2), 360.0, {"a", "b"}, "p");
  const auto d = downsample(s, 125.0);
  EXPECT_EQ(d.length(), 125);
  EXPECT_DOUBLE_EQ(d.fs(), 125.0);
  EXPECT_EQ(d.channels(), 2);
}

TEST(Downsample, ConstantStaysConstant) {
  for (auto [fs, target, T] : {std::tuple{360.0, 125.0, 1000}, std::tuple{250.0, 100.0, 77}, std::tuple{500.0, 10.0, 2000}}) {
    MultivariateSeries s(Matrix::Constant(T, 1, 3.25), fs, {"x"}, "p");
    const auto d = downsample(s, target);
    EXPECT_EQ(d.length(), static_cast<Index>(std::floor(T * target / fs)));
    EXPECT_LT((d.values().array() - 3.25).abs().maxCoeff(), 1e-9);
  }
}

TEST(Downsample, SinusoidMatchesAnalyticResampling) {
  const double fs = 360, target = 125;
  const Index T = 3600;
  Matrix x(T, 1);
  for (Index t = 0; t < T; ++t) x(t, 0) = std::sin(2 * std::numbers::pi * 1.0 * t / fs);
  const auto d = downsample(MultivariateSeries(x, fs, {"x"}, "p"), target);
  std::vector<double> got, want;
  for (Index j = 0; j < d.length(); ++j) {
    got.push_back(d.values()(j, 0));
    want.push_back(std::sin(2 * std::numbers::pi * 1.0 * j / target));
  }
  EXPECT_GT(correlation(got, want), 0.99);
}

TEST(Downsample, RejectsNonDecreasingRate) {
  MultivariateSeries s(Matrix::Zero(10, 1), 125.0, {"x"}, "p");
  EXPECT_THROW(downsample(s, 125.0), std::invalid_argument);
  EXPECT_THROW(downsample(s, 200.0), std::invalid_argument);
}

TEST(Downsample, AnnotationTimePreservedWithinOneOutputPeriod) {
  std::mt19937_64 rng(3);
  const double fs = 360, target = 125;
  const Index T = 5000;
  std::set<Index> pts;
  while (pts.size() < 40) pts.insert(static_cast<Index>(rng() % T));
  Record r;
  r.id = "x";
  r.series = std::make_shared<MultivariateSeries>(Matrix::Zero(T, 1), fs, std::vector<std::string>{"x"}, "p");
  r.annotations = AnnotationSet::from_points(AnnotationKind::boundary_points, {pts.begin(), pts.end()});
  const Record d = downsample(r, target);
  d.annotations.validate(d.series->length());
  // Each output point is within one output period of some input annotation, in seconds.
  for (Index q : d.annotations.points) {
    double best = 1e9;
    for (Index p : pts) best = std::min(best, std::abs(q / target - p / fs));
    EXPECT_LE(best, 1.0 / target);
  }
  for (Index p : pts) {
    double best = 1e9;
    for (Index q : d.annotations.points) best = std::min(best, std::abs(q / target - p / fs));
    EXPECT_LE(best, 1.0 / target);
  }
}

TEST(AnomalyWindow, SinglePointAt125Hz) {
  const auto mask = expand_anomaly_annotations({100}, 150, 125, 300);
  const auto pts = mask_to_points(mask);
  ASSERT_EQ(pts.size(), 37u);
  EXPECT_EQ(pts.front(), 82);
  EXPECT_EQ(pts.back(), 118);
}

TEST(AnomalyWindow, ClippedAtStart) {
  const auto pts = mask_to_points(expand_anomaly_annotations({0}, 150, 125, 300));
  ASSERT_EQ(pts.size(), 19u);
  EXPECT_EQ(pts.front(), 0);
  EXPECT_EQ(pts.back(), 18);
}

TEST(AnomalyWindow, OverlapsMerge) {
  const auto pts = mask_to_points(expand_anomaly_annotations({100, 110}, 150, 125, 300));
  ASSERT_EQ(pts.size(), static_cast<std::size_t>(128 - 82 + 1));
  EXPECT_EQ(pts.front(), 82);
  EXPECT_EQ(pts.back(), 128);
}

TEST(AnomalyWindow, DensityMatchesIntervalUnionOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Index T = 50 + static_cast<Index>(rng() % 400);
    const double fs = 50 + static_cast<double>(rng() % 400);
    std::set<Index> s;
    const auto k = rng() % 8;
    while (s.size() < k) s.insert(static_cast<Index>(rng() % T));
    const std::vector<Index> pts(s.begin(), s.end());
    const auto mask = expand_anomaly_annotations(pts, 150, fs, T);
    // Oracle: sort intervals, merge, sum lengths.
    const auto w = static_cast<Index>(std::floor(150 * fs / 1000));
    std::vector<std::pair<Index, Index>> iv;
    for (Index p : pts) iv.emplace_back(std::max<Index>(0, p - w), std::min<Index>(T - 1, p + w));
    Index covered = 0, cur_lo = -1, cur_hi = -2;
    for (auto [lo, hi] : iv) {
      if (lo > cur_hi + 1) {
        covered += cur_hi - cur_lo + 1;
        cur_lo = lo;
        cur_hi = hi;
      } else {
        cur_hi = std::max(cur_hi, hi);
      }
    }
    covered += cur_hi - cur_lo + 1;
    const auto flagged = static_cast<Index>(mask_to_points(mask).size());
    EXPECT_EQ(flagged, covered);
  }
}

TEST(Split, RandomByPatientReproducible) {
  std::vector<SplitItem> items;
  for (int i = 0; i < 10; ++i) items.push_back({"r" + std::to_string(i), "p" + std::to_string(i), 0});
  const auto a = make_split(items, SplitStrategy::random_by_patient, 0.8, 42);
  const auto b = make_split(items, SplitStrategy::random_by_patient, 0.8, 42);
  EXPECT_EQ(a.train_records.size(), 8u);
  EXPECT_EQ(a.test_records.size(), 2u);
  EXPECT_EQ(a.train_records, b.train_records);
  EXPECT_EQ(a.test_records, b.test_records);
}

TEST(Split, AnomalySortedCutsLowestCounts) {
  std::vector<SplitItem> items;
  for (int c : {3, 0, 4, 2, 1}) items.push_back({"r" + std::to_string(c), "p" + std::to_string(c), c});
  const auto s = make_split(items, SplitStrategy::anomaly_sorted, 0.8);
  EXPECT_EQ(s.train_records, (std::vector<std::string>{"r0", "r1", "r2", "r3"}));
  EXPECT_EQ(s.test_records, (std::vector<std::string>{"r4"}));
}

TEST(Split, SingleRecordRejected) {
  EXPECT_THROW(make_split(std::vector<SplitItem>{{"a", "a", 0}}, SplitStrategy::random_by_patient, 0.8),
               std::invalid_argument);
}

TEST(Split, DisjointAndExhaustive) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 30);
    std::vector<SplitItem> items;
    for (int i = 0; i < n; ++i) {
      items.push_back({"r" + std::to_string(i), "p" + std::to_string(rng() % (n / 2 + 2)), static_cast<Index>(rng() % 5)});
    }
    std::set<std::string> patients;
    for (const auto& it : items) patients.insert(it.patient);
    if (patients.size() < 2) continue;
    for (auto strat : {SplitStrategy::random_by_patient, SplitStrategy::anomaly_sorted}) {
      const double f = 0.05 + 0.9 * static_cast<double>(rng() % 1000) / 1000.0;
      const auto s = make_split(items, strat, f, trial);
      std::set<std::string> tr(s.train_records.begin(), s.train_records.end());
      std::set<std::string> te(s.test_records.begin(), s.test_records.end());
      EXPECT_FALSE(tr.empty());
      EXPECT_FALSE(te.empty());
      for (const auto& id : tr) EXPECT_EQ(te.count(id), 0u);
      EXPECT_EQ(tr.size() + te.size(), items.size());
    }
  }
}

TEST(Synth, SemsegLabelsSwitchAtPhaseChanges) {
  SynthConfig cfg;
  cfg.task = TaskKind::semseg;
  cfg.n_records = 2;
  cfg.T = 600;
  cfg.period = 40;
  cfg.period_jitter = 5;
  const auto recs = synth_dataset(cfg);
  for (const auto& r : recs) {
    ASSERT_EQ(r.series->feature_names().front(), "flow");
    const auto& l = r.annotations.labels;
    const Vector flow = r.series->channel(0);
    for (Index t = 1; t < r.series->length(); ++t) {
      // Inspiration carries positive flow; each change to expiration coincides with the flow sign flip.
      if (l[t] == 0) {
        EXPECT_GT(flow[t], 0.05);
      } else {
        EXPECT_LT(flow[t], 0.0);
      }
    }
    EXPECT_GT(assemble_segments(l).size(), 20u);
  }
}

TEST(Synth, ZeroAnomaliesGivesEmptyMask) {
  SynthConfig cfg;
  cfg.task = TaskKind::anomaly;
  cfg.anomalies_per_record = 0;
  cfg.n_records = 3;
  cfg.n_clean = 0;
  for (const auto& r : synth_dataset(cfg)) EXPECT_TRUE(r.annotations.points.empty());
}

TEST(Synth, AnomalyTestRecordsCarryInjections) {
  SynthConfig cfg;
  cfg.task = TaskKind::anomaly;
  cfg.n_records = 5;
  const auto recs = synth_dataset(cfg);
  EXPECT_EQ(cfg.resolved_clean(), 4);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(recs[i].anomaly_count(), 0);
  EXPECT_EQ(recs[4].anomaly_count(), 3 + 3 * cfg.dropout_len);
  const auto s = make_split(recs, SplitStrategy::anomaly_sorted, 0.8);
  EXPECT_EQ(s.test_records, (std::vector<std::string>{recs[4].id}));
}

TEST(Synth, BoundaryPeriodFifty) {
  SynthConfig cfg;
  cfg.task = TaskKind::boundary;
  cfg.n_records = 1;
  cfg.T = 500;
  cfg.period = 50;
  const auto r = synth_dataset(cfg).front();
  std::vector<Index> want;
  for (Index k = 0; k < 10; ++k) want.push_back(50 * k);
  EXPECT_EQ(r.annotations.points, want);
  // The respiration crest sits on each boundary.
  for (Index p : want) EXPECT_DOUBLE_EQ(r.series->values()(p, 0), 1.0);
}

TEST(Synth, DeterministicGivenSeed) {
  for (auto task : {TaskKind::semseg, TaskKind::boundary, TaskKind::anomaly}) {
    SynthConfig cfg;
    cfg.task = task;
    cfg.n_records = 3;
    cfg.noise_sd = 0.05;
    cfg.period_jitter = 4;
    cfg.seed = 9;
    const auto a = synth_dataset(cfg), b = synth_dataset(cfg);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].series->values(), b[i].series->values());
      EXPECT_EQ(a[i].annotations.points, b[i].annotations.points);
      EXPECT_EQ(a[i].annotations.labels, b[i].annotations.labels);
    }
  }
}

TEST(Synth, InvalidConfigRejected) {
  SynthConfig cfg;
  cfg.n_records = 0;
  EXPECT_THROW(synth_dataset(cfg), std::invalid_argument);
  cfg = {};
  cfg.noise_sd = -1;
  EXPECT_THROW(synth_dataset(cfg), std::invalid_argument);
  cfg = {};
  cfg.period_jitter = 30;
  EXPECT_THROW(synth_dataset(cfg), std::invalid_argument);
}
