#pragma once

#include "medts/baselines/anomaly.hpp"
#include "medts/baselines/boundary.hpp"
#include "medts/baselines/semseg.hpp"
#include "medts/core/task_kind.hpp"
#include "medts/ingest/record.hpp"
#include "medts/tasks/prediction.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace medts::baselines {

/// Baseline method and its parameters; unknown parameter names are rejected.
struct BaselineSpec {
  TaskKind task = TaskKind::semseg;
  std::string method;
  nlohmann::json params = nlohmann::json::object();

  static const std::vector<std::string>& methods(TaskKind task) {
    static const std::vector<std::string> seg{"threshold", "knn", "hmm"};
    static const std::vector<std::string> bnd{"peak", "template"};
    static const std::vector<std::string> anom{"quantile", "zscore", "rolling", "fft"};
    return task == TaskKind::semseg ? seg : task == TaskKind::boundary ? bnd : anom;
  }

  void validate() const {
    const auto& m = methods(task);
    if (std::find(m.begin(), m.end(), method) == m.end()) {
      throw std::invalid_argument("unknown " + to_string(task) + " baseline: " + method);
    }
    if (!params.is_object()) throw std::invalid_argument("baseline params must be a JSON object");
    const auto allowed = allowed_params();
    for (auto it = params.begin(); it != params.end(); ++it) {
      if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
        throw std::invalid_argument("unknown parameter '" + it.key() + "' for baseline " + method);
      }
    }
  }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    return params.contains(key) ? params.at(key).get<T>() : fallback;
  }

 private:
  std::vector<std::string> allowed_params() const {
    if (method == "threshold") return {"channel", "threshold", "expiration_class", "inspiration_class"};
    if (method == "knn") return {"k", "half_window"};
    if (method == "hmm") return {"restarts", "max_iter", "seed"};
    if (method == "peak") return {"channel", "min_distance"};
    if (method == "template") return {"channel", "n_templates", "band"};
    if (method == "quantile") return {"q_lo", "q_hi"};
    if (method == "zscore") return {"k"};
    if (method == "rolling") return {"window", "threshold", "k"};
    if (method == "fft") return {"m", "anomaly_ratio"};
    return {};
  }
};

namespace detail {

inline std::vector<const MultivariateSeries*> series_of(const std::vector<ingest::Record>& rs) {
  std::vector<const MultivariateSeries*> out;
  for (const auto& r : rs) out.push_back(r.series.get());
  return out;
}

}  // namespace detail

/// Fits on `train` and predicts every record of `test`.
inline std::vector<tasks::TaskPrediction> run_baseline(const BaselineSpec& spec, const std::vector<ingest::Record>& train,
                                                       const std::vector<ingest::Record>& test) {
  spec.validate();
  std::vector<tasks::TaskPrediction> out;
  auto emit = [&](auto&& fn) {
    for (const auto& r : test) {
      tasks::TaskPrediction p;
      p.task = spec.task;
      fn(r, p);
      out.push_back(std::move(p));
    }
  };
  const auto train_series = detail::series_of(train);
  std::vector<std::vector<int>> labels;
  std::vector<std::vector<Index>> points;
  for (const auto& r : train) {
    labels.push_back(r.annotations.labels);
    points.push_back(r.annotations.points);
  }
  const auto& m = spec.method;
  if (m == "threshold") {
    FlowThresholdBaseline b{spec.get<std::string>("channel", "flow"), spec.get("threshold", 0.05),
                            spec.get("expiration_class", 1), spec.get("inspiration_class", 0)};
    emit([&](const auto& r, auto& p) { p.labels = b.predict(*r.series); });
  } else if (m == "knn") {
    KnnBaseline b(spec.get<Index>("k", 5), spec.get<Index>("half_window", 4));
    b.fit(train_series, labels);
    emit([&](const auto& r, auto& p) { p.labels = b.predict(*r.series); });
  } else if (m == "hmm") {
    HmmBaseline::Options o;
    o.restarts = spec.get<Index>("restarts", 10);
    o.max_iter = spec.get<Index>("max_iter", 100);
    o.seed = spec.get<std::uint64_t>("seed", 0);
    HmmBaseline b(o);
    b.fit(train_series, labels);
    emit([&](const auto& r, auto& p) { p.labels = b.predict(*r.series); });
  } else if (m == "peak") {
    PeakBaseline b;
    b.channel = spec.get<std::string>("channel", "resp");
    if (spec.params.contains("min_distance")) b.min_distance = spec.params.at("min_distance").get<Index>();
    b.fit(points);
    emit([&](const auto& r, auto& p) { p.boundary_points = b.predict(*r.series); });
  } else if (m == "template") {
    TemplateBaseline b(spec.get<std::string>("channel", "resp"), spec.get<Index>("n_templates", 20), spec.get("band", 0.1));
    b.fit(train_series, points);
    emit([&](const auto& r, auto& p) { p.boundary_points = b.predict(*r.series); });
  } else {
    auto run = [&](auto detector) {
      detector.fit(train_series);
      emit([&](const auto& r, auto& p) {
        auto res = detector.detect(*r.series);
        p.scores = std::move(res.scores);
        p.anomaly_mask = std::move(res.mask);
      });
    };
    if (m == "quantile") {
      run(QuantileDetector(spec.get("q_lo", 0.05), spec.get("q_hi", 0.95)));
    } else if (m == "zscore") {
      run(ZScoreDetector(spec.get("k", 3.0)));
    } else if (m == "rolling") {
      std::optional<double> thr;
      if (spec.params.contains("threshold")) thr = spec.params.at("threshold").get<double>();
      run(RollingDetector(spec.get<Index>("window", 25), thr, spec.get("k", 3.0)));
    } else {
      run(FftDetector(spec.get<Index>("m", 3), spec.get("anomaly_ratio", 0.1)));
    }
  }
  return out;
}

}  // namespace medts::baselines
