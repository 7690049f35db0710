#pragma once

#include "medts/baselines/semseg.hpp"
#include "medts/tasks/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::baselines {

/// Local maxima of the raw respiration channel under the shared min-distance rule.
struct PeakBaseline {
  std::string channel = "resp";
  std::optional<Index> min_distance;

  /// Sets min_distance from the training boundary gaps when it is not given.
  void fit(const std::vector<std::vector<Index>>& train_boundaries) {
    if (min_distance) return;
    std::vector<Index> gaps;
    for (const auto& b : train_boundaries) {
      const auto g = tasks::boundary_gaps(b);
      gaps.insert(gaps.end(), g.begin(), g.end());
    }
    min_distance = tasks::distance_heuristic(gaps);
  }

  std::vector<Index> predict(const MultivariateSeries& s) const {
    if (!min_distance) throw std::logic_error("peak baseline needs a min_distance or a fit");
    const Index c = detail::require_channel(s, channel);
    const Vector v = s.channel(c);
    return tasks::find_boundaries(std::vector<double>(v.data(), v.data() + v.size()), *min_distance);
  }
};

/// DTW distance under a Sakoe-Chiba band of `band` cells around the rescaled diagonal.
inline double dtw_distance(const double* a, Index n, const double* b, Index m, Index band) {
  const double inf = std::numeric_limits<double>::infinity();
  band = std::max<Index>(band, std::abs(n - m));
  std::vector<double> prev(static_cast<std::size_t>(m + 1), inf), cur(static_cast<std::size_t>(m + 1), inf);
  prev[0] = 0;
  for (Index i = 1; i <= n; ++i) {
    std::fill(cur.begin(), cur.end(), inf);
    const Index centre = (i * m) / n;
    const Index lo = std::max<Index>(1, centre - band), hi = std::min<Index>(m, centre + band);
    for (Index j = lo; j <= hi; ++j) {
      const double d = a[i - 1] - b[j - 1];
      const double best = std::min({prev[static_cast<std::size_t>(j)], prev[static_cast<std::size_t>(j - 1)],
                                    cur[static_cast<std::size_t>(j - 1)]});
      cur[static_cast<std::size_t>(j)] = d * d + best;
    }
    std::swap(prev, cur);
  }
  return prev[static_cast<std::size_t>(m)];
}

/// Template matching: training cycles serve as templates; windows are matched by DTW and the best
/// non-overlapping matches contribute their start points.
class TemplateBaseline {
 public:
  explicit TemplateBaseline(std::string channel = "resp", Index n_templates = 20, double band_fraction = 0.1)
      : channel_(std::move(channel)), n_templates_(n_templates), band_(band_fraction) {
    if (n_templates < 1) throw std::invalid_argument("need at least one template");
    if (band_fraction < 0) throw std::invalid_argument("negative DTW band");
  }

  /// Templates are cycles between consecutive training boundaries, evenly spaced over the pool.
  void fit(const std::vector<const MultivariateSeries*>& series, const std::vector<std::vector<Index>>& boundaries) {
    if (series.empty()) throw std::invalid_argument("template baseline needs at least one training record");
    if (series.size() != boundaries.size()) throw std::invalid_argument("need boundaries for every training record");
    std::vector<std::vector<double>> pool;
    for (std::size_t i = 0; i < series.size(); ++i) {
      const Index c = detail::require_channel(*series[i], channel_);
      const auto& b = boundaries[i];
      for (std::size_t k = 1; k < b.size(); ++k) {
        if (b[k] - b[k - 1] < 2) continue;
        std::vector<double> seg;
        for (Index t = b[k - 1]; t < b[k]; ++t) seg.push_back(series[i]->values()(t, c));
        pool.push_back(std::move(seg));
      }
    }
    if (pool.empty()) throw std::invalid_argument("no templates extractable from the training records");
    templates_.clear();
    const auto n = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(n_templates_));
    for (std::size_t k = 0; k < n; ++k) templates_.push_back(pool[k * pool.size() / n]);
  }

  void set_templates(std::vector<std::vector<double>> t) {
    if (t.empty()) throw std::invalid_argument("no templates");
    templates_ = std::move(t);
  }
  const std::vector<std::vector<double>>& templates() const { return templates_; }

  std::vector<Index> predict(const MultivariateSeries& s) const {
    if (templates_.empty()) throw std::logic_error("template baseline used before fit");
    const Index c = detail::require_channel(s, channel_);
    const Vector v = s.channel(c);
    const Index T = v.size();
    struct Match {
      double cost;
      Index start, len;
    };
    std::vector<Match> matches;
    for (const auto& tpl : templates_) {
      const auto L = static_cast<Index>(tpl.size());
      if (L > T) continue;
      const auto band = static_cast<Index>(std::ceil(band_ * static_cast<double>(L)));
      for (Index t = 0; t + L <= T; ++t) {
        const double d = dtw_distance(v.data() + t, L, tpl.data(), L, band);
        matches.push_back({d / static_cast<double>(L), t, L});
      }
    }
    std::stable_sort(matches.begin(), matches.end(), [](const Match& a, const Match& b) { return a.cost < b.cost; });
    std::vector<char> used(static_cast<std::size_t>(T), 0);
    std::vector<Index> starts;
    for (const auto& m : matches) {
      bool free = true;
      for (Index k = m.start; k < m.start + m.len && free; ++k) free = !used[static_cast<std::size_t>(k)];
      if (!free) continue;
      std::fill(used.begin() + m.start, used.begin() + m.start + m.len, char{1});
      starts.push_back(m.start);
    }
    std::sort(starts.begin(), starts.end());
    return starts;
  }

 private:
  std::string channel_;
  Index n_templates_;
  double band_;
  std::vector<std::vector<double>> templates_;
};

}  // namespace medts::baselines
