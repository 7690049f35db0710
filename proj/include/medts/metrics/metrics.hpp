#pragma once

#include "medts/core/series.hpp"
#include "medts/core/task_kind.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace medts::metrics {

/// Best-match IoU for every gt segment: the pred segment with the largest overlap (same class when
/// `class_matched`), ties to the lower start; 0 when nothing overlaps.
inline std::vector<double> segment_ious(const std::vector<Segment>& pred, const std::vector<Segment>& gt,
                                        bool class_matched) {
  if (gt.empty()) throw std::invalid_argument("no ground-truth segments");
  std::vector<Segment> p = pred;
  std::sort(p.begin(), p.end(), [](const Segment& a, const Segment& b) { return a.start < b.start; });
  std::vector<double> out;
  out.reserve(gt.size());
  for (const auto& g : gt) {
    Index best_overlap = 0;
    const Segment* best = nullptr;
    // First candidate whose end passes g.start.
    auto it = std::lower_bound(p.begin(), p.end(), g.start, [](const Segment& s, Index v) { return s.end <= v; });
    for (; it != p.end() && it->start < g.end; ++it) {
      if (class_matched && it->label != g.label) continue;
      const Index ov = std::min(it->end, g.end) - std::max(it->start, g.start);
      if (ov > best_overlap) {
        best_overlap = ov;
        best = &*it;
      }
    }
    if (!best) {
      out.push_back(0.0);
      continue;
    }
    const Index uni = std::max(best->end, g.end) - std::min(best->start, g.start);
    out.push_back(static_cast<double>(best_overlap) / static_cast<double>(uni));
  }
  return out;
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double segment_miou(const std::vector<Segment>& pred, const std::vector<Segment>& gt, bool class_matched = true) {
  return mean(segment_ious(pred, gt, class_matched));
}

inline double fraction_at_least(const std::vector<double>& ious, double tau) {
  if (ious.empty()) return 0.0;
  const auto n = std::count_if(ious.begin(), ious.end(), [&](double v) { return v >= tau - 1e-12; });
  return static_cast<double>(n) / static_cast<double>(ious.size());
}

inline double accuracy_at_iou(const std::vector<Segment>& pred, const std::vector<Segment>& gt, double tau = 0.75,
                              bool class_matched = true) {
  return fraction_at_least(segment_ious(pred, gt, class_matched), tau);
}

/// Per-class confusion counts, accumulated across records.
struct ConfusionCounts {
  std::map<int, Index> tp, fp, fn;
  std::set<int> seen;

  void add(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("label sequences differ in length");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      seen.insert(pred[i]);
      seen.insert(gt[i]);
      if (pred[i] == gt[i]) {
        ++tp[gt[i]];
      } else {
        ++fp[pred[i]];
        ++fn[gt[i]];
      }
    }
  }

  /// Macro F1 over classes present in either sequence.
  double macro_f1() const {
    if (seen.empty()) return 0.0;
    double s = 0;
    for (int c : seen) {
      const double t = tp.count(c) ? static_cast<double>(tp.at(c)) : 0.0;
      const double f = (fp.count(c) ? static_cast<double>(fp.at(c)) : 0.0) + (fn.count(c) ? static_cast<double>(fn.at(c)) : 0.0);
      s += 2 * t + f > 0 ? 2 * t / (2 * t + f) : 0.0;
    }
    return s / static_cast<double>(seen.size());
  }

  double accuracy() const {
    Index right = 0, total = 0;
    for (const auto& [_, v] : tp) right += v;
    total = right;
    for (const auto& [_, v] : fp) total += v;
    return total ? static_cast<double>(right) / static_cast<double>(total) : 0.0;
  }
};

inline double pointwise_f1(const std::vector<int>& pred, const std::vector<int>& gt) {
  ConfusionCounts c;
  c.add(pred, gt);
  return c.macro_f1();
}

struct BoundaryMatch {
  std::vector<std::pair<Index, Index>> pairs;  // (gt, pred)
  std::vector<Index> unmatched_gt;
  double penalty = 0;

  std::vector<double> errors() const {
    std::vector<double> e;
    for (const auto& [g, p] : pairs) e.push_back(static_cast<double>(std::abs(g - p)));
    for (std::size_t i = 0; i < unmatched_gt.size(); ++i) e.push_back(penalty);
    return e;
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Ascending gt points each take the nearest unmatched pred point (ties to the lower pred index).
/// Unmatched gt points cost the median gt gap, or `fallback_penalty` with fewer than two gt points.
inline BoundaryMatch match_boundaries(const std::vector<Index>& pred, const std::vector<Index>& gt,
                                      double fallback_penalty) {
  if (gt.empty()) throw std::invalid_argument("no ground-truth boundary points");
  BoundaryMatch m;
  if (gt.size() >= 2) {
    std::vector<double> gaps;
    for (std::size_t i = 1; i < gt.size(); ++i) gaps.push_back(static_cast<double>(gt[i] - gt[i - 1]));
    m.penalty = median(std::move(gaps));
  } else {
    m.penalty = fallback_penalty;
  }
  std::set<Index> free(pred.begin(), pred.end());
  for (Index g : gt) {
    if (free.empty()) {
      m.unmatched_gt.push_back(g);
      continue;
    }
    auto hi = free.lower_bound(g);
    auto pick = hi;
    if (hi == free.end()) {
      pick = std::prev(hi);
    } else if (hi != free.begin()) {
      auto lo = std::prev(hi);
      if (g - *lo <= *hi - g) pick = lo;
    }
    m.pairs.emplace_back(g, *pick);
    free.erase(pick);
  }
  return m;
}

inline double boundary_mae(const std::vector<Index>& pred, const std::vector<Index>& gt, double fallback_penalty = 0) {
  return mean(match_boundaries(pred, gt, fallback_penalty).errors());
}

inline double boundary_accuracy(const std::vector<Index>& pred, const std::vector<Index>& gt, double tol = 50) {
  const auto m = match_boundaries(pred, gt, 0);
  const auto ok = std::count_if(m.pairs.begin(), m.pairs.end(),
                                [&](const auto& pr) { return static_cast<double>(std::abs(pr.first - pr.second)) <= tol; });
  return static_cast<double>(ok) / static_cast<double>(gt.size());
}

struct PRF {
  double precision = 0, recall = 0, f1 = 0;
};

inline PRF prf_from_counts(Index tp, Index fp, Index fn) {
  PRF r;
  r.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

/// Any flagged point inside a gt anomaly run flags the whole run.
inline std::vector<std::uint8_t> point_adjust(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("masks differ in length");
  std::vector<std::uint8_t> out = pred;
  for (std::size_t i = 0; i < gt.size();) {
    if (!gt[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    bool hit = false;
    for (; j < gt.size() && gt[j]; ++j) hit = hit || pred[j] != 0;
    if (hit) std::fill(out.begin() + static_cast<std::ptrdiff_t>(i), out.begin() + static_cast<std::ptrdiff_t>(j), 1);
    i = j;
  }
  return out;
}

inline void mask_counts(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, Index& tp, Index& fp,
                        Index& fn) {
  if (pred.size() != gt.size()) throw std::invalid_argument("masks differ in length");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    tp += pred[i] && gt[i];
    fp += pred[i] && !gt[i];
    fn += !pred[i] && gt[i];
  }
}

inline PRF pointwise_prf(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
  Index tp = 0, fp = 0, fn = 0;
  mask_counts(pred, gt, tp, fp, fn);
  return prf_from_counts(tp, fp, fn);
}

inline PRF period_adjusted_prf(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
  return pointwise_prf(point_adjust(pred, gt), gt);
}

/// Rank statistic with mid-ranks for ties; absent when either class is empty.
inline std::optional<double> auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& gt) {
  if (scores.size() != gt.size()) throw std::invalid_argument("scores and mask differ in length");
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0;
  double n_pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (gt[idx[k]]) {
        pos_rank_sum += mid;
        n_pos += 1;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return (pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

/// Named metric values plus matching diagnostics.
struct MetricReport {
  TaskKind task = TaskKind::semseg;
  std::map<std::string, double> values;
  std::vector<std::string> absent;  // metrics that are undefined on this data
  std::vector<double> segment_ious;
  std::vector<std::pair<Index, Index>> matched_pairs;

  bool has(const std::string& k) const { return values.count(k) != 0; }
  double at(const std::string& k) const {
    auto it = values.find(k);
    if (it == values.end()) throw std::out_of_range("metric not in report: " + k);
    return it->second;
  }

  /// `key=value` lines, sorted by key; absent metrics appear as `key=absent`.
  std::string to_kv() const {
    std::map<std::string, std::string> all;
    std::ostringstream os;
    os.precision(10);
    for (const auto& [k, v] : values) {
      os.str("");
      os << v;
      all[k] = os.str();
    }
    for (const auto& k : absent) all[k] = "absent";
    std::string out = "task=" + to_string(task) + "\n";
    for (const auto& [k, v] : all) out += k + "=" + v + "\n";
    return out;
  }

  std::vector<std::string> keys() const {
    std::set<std::string> k;
    for (const auto& [name, _] : values) k.insert(name);
    for (const auto& name : absent) k.insert(name);
    return {k.begin(), k.end()};
  }

  std::string tsv_value(const std::string& k) const {
    auto it = values.find(k);
    if (it == values.end()) return "absent";
    std::ostringstream os;
    os.precision(10);
    os << it->second;
    return os.str();
  }
};

/// Collects per-record results and reduces them to one report.
class Accumulator {
 public:
  explicit Accumulator(TaskKind task, double boundary_tol = 50, double iou_tau = 0.75)
      : task_(task), tol_(boundary_tol), tau_(iou_tau) {}

  void add_semseg(const std::vector<int>& pred, const std::vector<int>& gt) {
    conf_.add(pred, gt);
    const auto ious = segment_ious(assemble_segments(pred), assemble_segments(gt), true);
    ious_.insert(ious_.end(), ious.begin(), ious.end());
  }

  void add_boundary(const std::vector<Index>& pred, const std::vector<Index>& gt, Index T) {
    if (gt.empty()) return;
    const auto m = match_boundaries(pred, gt, static_cast<double>(T));
    const auto e = m.errors();
    errors_.insert(errors_.end(), e.begin(), e.end());
    for (const auto& [g, p] : m.pairs) within_tol_ += static_cast<double>(std::abs(g - p)) <= tol_ ? 1 : 0;
    n_gt_points_ += static_cast<Index>(gt.size());
    pairs_.insert(pairs_.end(), m.pairs.begin(), m.pairs.end());
    const auto ious = segment_ious(segments_from_boundaries(pred, T), segments_from_boundaries(gt, T), false);
    ious_.insert(ious_.end(), ious.begin(), ious.end());
  }

  void add_anomaly(const std::vector<double>& scores, const std::vector<std::uint8_t>& pred,
                   const std::vector<std::uint8_t>& gt) {
    mask_counts(point_adjust(pred, gt), gt, tp_, fp_, fn_);
    mask_counts(pred, gt, raw_tp_, raw_fp_, raw_fn_);
    scores_.insert(scores_.end(), scores.begin(), scores.end());
    gt_.insert(gt_.end(), gt.begin(), gt.end());
  }

  MetricReport report() const {
    MetricReport r;
    r.task = task_;
    switch (task_) {
      case TaskKind::semseg:
        r.values["f1"] = conf_.macro_f1();
        r.values["accuracy"] = conf_.accuracy();
        r.values["miou"] = mean(ious_);
        r.values["accuracy_at_iou"] = fraction_at_least(ious_, tau_);
        r.segment_ious = ious_;
        break;
      case TaskKind::boundary:
        r.values["mae"] = mean(errors_);
        r.values["boundary_accuracy"] = n_gt_points_ ? within_tol_ / static_cast<double>(n_gt_points_) : 0.0;
        r.values["miou"] = mean(ious_);
        r.values["accuracy_at_iou"] = fraction_at_least(ious_, tau_);
        r.segment_ious = ious_;
        r.matched_pairs = pairs_;
        break;
      case TaskKind::anomaly: {
        const auto adj = prf_from_counts(tp_, fp_, fn_);
        const auto raw = prf_from_counts(raw_tp_, raw_fp_, raw_fn_);
        r.values["precision"] = adj.precision;
        r.values["recall"] = adj.recall;
        r.values["f1"] = adj.f1;
        r.values["pointwise_f1"] = raw.f1;
        if (auto a = auroc(scores_, gt_)) {
          r.values["auroc"] = *a;
        } else {
          r.absent.push_back("auroc");
        }
        break;
      }
    }
    return r;
  }

 private:
  TaskKind task_;
  double tol_, tau_;
  ConfusionCounts conf_;
  std::vector<double> ious_, errors_;
  double within_tol_ = 0;
  Index n_gt_points_ = 0;
  std::vector<std::pair<Index, Index>> pairs_;
  Index tp_ = 0, fp_ = 0, fn_ = 0, raw_tp_ = 0, raw_fp_ = 0, raw_fn_ = 0;
  std::vector<double> scores_;
  std::vector<std::uint8_t> gt_;
};

}  // namespace medts::metrics
