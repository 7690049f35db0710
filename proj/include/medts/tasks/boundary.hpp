#pragma once

#include "medts/core/series.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

namespace medts::tasks {

/// Strict local maxima; a plateau counts once, at its leftmost point. Series edges never qualify.
inline std::vector<Index> local_maxima(const std::vector<double>& s) {
  std::vector<Index> out;
  const auto n = static_cast<Index>(s.size());
  Index i = 1;
  while (i < n - 1) {
    if (s[i] > s[i - 1]) {
      Index j = i;
      while (j + 1 < n && s[j + 1] == s[i]) ++j;
      if (j + 1 < n && s[j + 1] < s[i]) out.push_back(i);
      i = j + 1;
    } else {
      ++i;
    }
  }
  return out;
}

/// Greedy by descending score (ties to the lower index), dropping candidates closer than min_distance.
inline std::vector<Index> find_boundaries(const std::vector<double>& scores, Index min_distance) {
  if (min_distance < 1) throw std::invalid_argument("min_distance must be at least 1");
  auto cand = local_maxima(scores);
  std::stable_sort(cand.begin(), cand.end(), [&](Index a, Index b) { return scores[a] > scores[b]; });
  std::vector<Index> kept;
  std::vector<bool> blocked(scores.size(), false);
  for (Index c : cand) {
    if (blocked[static_cast<std::size_t>(c)]) continue;
    kept.push_back(c);
    const Index lo = std::max<Index>(0, c - min_distance + 1);
    const Index hi = std::min<Index>(static_cast<Index>(scores.size()) - 1, c + min_distance - 1);
    for (Index k = lo; k <= hi; ++k) blocked[static_cast<std::size_t>(k)] = true;
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

/// Nearest-rank percentile (rank ceil(p * n), at least 1) of sorted values.
inline double nearest_rank(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("nearest-rank quantile of empty input");
  std::sort(v.begin(), v.end());
  const auto n = static_cast<double>(v.size());
  const auto rank = std::clamp<Index>(static_cast<Index>(std::ceil(p * n - 1e-9)), 1, static_cast<Index>(v.size()));
  return v[static_cast<std::size_t>(rank - 1)];
}

/// 10th percentile of training segment lengths, floored, at least 1.
inline Index distance_heuristic(const std::vector<Index>& segment_lengths) {
  if (segment_lengths.empty()) throw std::invalid_argument("no segment lengths for the distance heuristic");
  std::vector<double> v(segment_lengths.begin(), segment_lengths.end());
  return std::max<Index>(1, static_cast<Index>(std::floor(nearest_rank(std::move(v), 0.10))));
}

/// Segment lengths implied by consecutive boundary points (window edges excluded).
inline std::vector<Index> boundary_gaps(const std::vector<Index>& points) {
  std::vector<Index> out;
  for (std::size_t i = 1; i < points.size(); ++i) out.push_back(points[i] - points[i - 1]);
  return out;
}

struct DistanceSearch {
  Index distance = 1;
  double value = 0;
  std::map<Index, double> evaluated;
};

/// Integer search over [lo, hi] maximizing `objective`: a coarse grid picks a bracket, golden-section
/// narrows it, a scan of the final bracket and a plateau walk finish. Every evaluated point (including `also_try`)
/// competes; ties go to the smaller distance.
inline DistanceSearch optimize_distance(const std::function<double(Index)>& objective, Index lo, Index hi,
                                        std::optional<Index> also_try = std::nullopt, Index grid_points = 9) {
  if (lo < 1 || hi < lo) throw std::invalid_argument("empty distance search range");
  DistanceSearch s;
  auto f = [&](Index d) {
    auto it = s.evaluated.find(d);
    if (it != s.evaluated.end()) return it->second;
    const double v = objective(d);
    s.evaluated.emplace(d, v);
    return v;
  };
  if (also_try && *also_try >= lo && *also_try <= hi) f(*also_try);
  Index a = lo, b = hi;
  if (hi - lo + 1 > 2 * grid_points) {
    std::vector<Index> grid;
    for (Index k = 0; k < grid_points; ++k) grid.push_back(lo + (hi - lo) * k / (grid_points - 1));
    std::size_t best = 0;
    for (std::size_t k = 0; k < grid.size(); ++k)
      if (f(grid[k]) > f(grid[best])) best = k;
    a = grid[best == 0 ? 0 : best - 1];
    b = grid[std::min(best + 1, grid.size() - 1)];
  }
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  while (b - a > 3) {
    const auto span = static_cast<double>(b - a);
    const Index c = a + static_cast<Index>(std::llround((1.0 - inv_phi) * span));
    const Index d = std::max(c + 1, a + static_cast<Index>(std::llround(inv_phi * span)));
    if (f(c) >= f(d)) {
      b = d;
    } else {
      a = c;
    }
  }
  for (Index d = a; d <= b; ++d) f(d);
  // Walk plateaus outward from the best point so flat stretches cannot hide a higher step.
  Index best = s.evaluated.begin()->first;
  for (const auto& [d, v] : s.evaluated)
    if (v > s.evaluated.at(best)) best = d;
  for (Index d = best; d < hi && f(d + 1) >= f(d);) ++d;
  for (Index d = best; d > lo && f(d - 1) >= f(d);) --d;
  s.distance = s.evaluated.begin()->first;
  s.value = s.evaluated.begin()->second;
  for (const auto& [d, v] : s.evaluated) {
    if (v > s.value) {
      s.value = v;
      s.distance = d;
    }
  }
  return s;
}

}  // namespace medts::tasks
