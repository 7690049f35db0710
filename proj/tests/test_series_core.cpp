#include "medts/core/series.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace medts;

namespace {

std::shared_ptr<const MultivariateSeries> ramp(Index T, Index C = 1) {
  Matrix v(T, C);
  for (Index t = 0; t < T; ++t)
    for (Index c = 0; c < C; ++c) v(t, c) = static_cast<double>(t + c);
  std::vector<std::string> names;
  for (Index c = 0; c < C; ++c) names.push_back("ch" + std::to_string(c));
  return std::make_shared<MultivariateSeries>(v, 125.0, names, "p0");
}

}  // namespace

TEST(PatchIndices, ExactExamples) {
  auto g = patch_indices(32, 16, 8);
  EXPECT_EQ(g.n_patches, 3);
  EXPECT_EQ(g.indices(), (std::vector<Index>{0, 1, 2}));
  EXPECT_EQ(patch_indices(16, 16, 8).n_patches, 1);
  EXPECT_THROW(patch_indices(10, 16, 8), std::invalid_argument);
  EXPECT_THROW(patch_indices(32, 0, 8), std::invalid_argument);
  EXPECT_THROW(patch_indices(32, 16, 0), std::invalid_argument);
}

TEST(PatchIndices, RandomGridsStayInsideAndAreMaximal) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index l = std::uniform_int_distribution<Index>(1, 64)(rng);
    const Index s = std::uniform_int_distribution<Index>(1, 64)(rng);
    const Index T = std::uniform_int_distribution<Index>(l, 600)(rng);
    const auto g = patch_indices(T, l, s);
    Index brute = 0;
    while (brute * s + l <= T) ++brute;
    ASSERT_EQ(g.n_patches, brute);
    ASSERT_LE(g.offset(g.n_patches - 1) + l, T);
    ASSERT_GT(g.offset(g.n_patches) + l, T);
  }
}

TEST(AssembleSegments, Examples) {
  auto s = assemble_segments({0, 0, 1, 1, 0});
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0], (Segment{0, 2, 0}));
  EXPECT_EQ(s[1], (Segment{2, 4, 1}));
  EXPECT_EQ(s[2], (Segment{4, 5, 0}));
  EXPECT_EQ(assemble_segments({3, 3, 3}), (std::vector<Segment>{{0, 3, 3}}));
  EXPECT_EQ(assemble_segments({0, 1, 0, 1}).size(), 4u);
  EXPECT_THROW(assemble_segments({}), std::invalid_argument);
}

TEST(AssembleSegments, RoundTripPartition) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = std::uniform_int_distribution<int>(1, 80)(rng);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = std::uniform_int_distribution<int>(0, 3)(rng);
    const auto segs = assemble_segments(labels);
    ASSERT_EQ(flatten_segments(segs), labels);
    ASSERT_EQ(segs.front().start, 0);
    ASSERT_EQ(segs.back().end, n);
    for (std::size_t i = 1; i < segs.size(); ++i) {
      ASSERT_EQ(segs[i].start, segs[i - 1].end);
      ASSERT_NE(segs[i].label, segs[i - 1].label);
    }
  }
}

TEST(WindowSeries, OffsetsAndDropping) {
  auto offsets = [](const std::vector<Window>& ws) {
    std::vector<Index> o;
    for (const auto& w : ws) o.push_back(w.offset);
    return o;
  };
  EXPECT_EQ(offsets(window_series(ramp(10), 4, 4)), (std::vector<Index>{0, 4}));
  EXPECT_EQ(offsets(window_series(ramp(4), 4, 1)), (std::vector<Index>{0}));
  // oracle: offsets o with o + 4 <= 9 and o divisible by 2
  std::vector<Index> expected;
  for (Index o = 0; o + 4 <= 9; ++o)
    if (o % 2 == 0) expected.push_back(o);
  EXPECT_EQ(offsets(window_series(ramp(9), 4, 2)), expected);
  EXPECT_THROW(window_series(ramp(3), 4, 1), std::invalid_argument);
}

TEST(WindowSeries, LabelsAlignAndPrefixIsCovered) {
  auto s = ramp(23, 2);
  std::vector<int> labels(23);
  for (int i = 0; i < 23; ++i) labels[static_cast<std::size_t>(i)] = i % 3;
  for (Index step = 1; step <= 5; ++step) {
    auto ws = window_series(s, 5, step, labels);
    Index covered = 0;
    for (const auto& w : ws) {
      ASSERT_LE(w.offset, covered);  // no gaps when step <= length
      covered = std::max(covered, w.offset + w.length);
      for (Index k = 0; k < w.length; ++k) {
        ASSERT_EQ(w.labels[static_cast<std::size_t>(k)], labels[static_cast<std::size_t>(w.offset + k)]);
        ASSERT_EQ(w.values()(k, 1), static_cast<double>(w.offset + k + 1));
      }
    }
  }
}

TEST(MultivariateSeries, Invariants) {
  Matrix v(2, 2);
  v << 1, 2, 3, 4;
  EXPECT_THROW(MultivariateSeries(v, 0.0, {"a", "b"}), std::invalid_argument);
  EXPECT_THROW(MultivariateSeries(v, 10.0, {"a"}), std::invalid_argument);
  v(0, 0) = std::nan("");
  EXPECT_THROW(MultivariateSeries(v, 10.0, {"a", "b"}), std::invalid_argument);
}

TEST(SegmentsFromBoundaries, SpansIncludeEdges) {
  auto s = segments_from_boundaries({0, 10, 25}, 40);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].start, 0);
  EXPECT_EQ(s[0].end, 10);
  EXPECT_EQ(s[2].end, 40);
  EXPECT_EQ(segments_from_boundaries({}, 5).size(), 1u);
}
