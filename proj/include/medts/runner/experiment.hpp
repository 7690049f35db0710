#pragma once

// Training, evaluation and sweeps driven by an ExperimentConfig.
//
// Output directory layout:
//   config.resolved.json   fully resolved config (re-runnable)
//   checkpoint.bin         best heads by validation loss plus calibration
//   train_log.tsv          epoch, train loss, validation loss, mean batch loss
//   run.log                human-readable progress log
//   metrics.txt            key=value report
//   metrics.tsv            key<TAB>value report
//   bookkeeping.tsv        per test record: n_text, n_patch, sequences, sequence length
//   predictions/<id>.pred.ann, plots/<id>.svg

#include "medts/backbone/backbone.hpp"
#include "medts/baselines/baselines.hpp"
#include "medts/ingest/record_io.hpp"
#include "medts/ingest/resample.hpp"
#include "medts/ingest/split.hpp"
#include "medts/ingest/synth.hpp"
#include "medts/metrics/metrics.hpp"
#include "medts/prompt/prompt.hpp"
#include "medts/runner/checkpoint.hpp"
#include "medts/runner/config.hpp"
#include "medts/runner/model.hpp"
#include "medts/runner/plot.hpp"
#include "medts/tasks/anomaly.hpp"
#include "medts/tasks/boundary.hpp"
#include "medts/tasks/prediction.hpp"
#include "medts/tasks/semseg.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::runner {

class FrozenBackboneViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---- data -------------------------------------------------------------------

struct Dataset {
  std::string id;
  std::string description;
  std::vector<ingest::Record> train, val, test;
  bool val_is_train = false;  // too few training patients to hold any out
};

namespace detail {

inline ingest::AnnotationKind expected_kind(TaskKind task) {
  switch (task) {
    case TaskKind::semseg: return ingest::AnnotationKind::point_labels;
    case TaskKind::boundary: return ingest::AnnotationKind::boundary_points;
    case TaskKind::anomaly: return ingest::AnnotationKind::anomaly_points;
  }
  return ingest::AnnotationKind::point_labels;
}

inline ingest::Record select_channels(const ingest::Record& r, const std::vector<std::string>& names) {
  if (names.empty()) return r;
  const auto& s = *r.series;
  Matrix v(s.length(), static_cast<Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto c = s.channel_index(names[k]);
    if (!c) throw std::invalid_argument("no channel named " + names[k]);
    v.col(static_cast<Index>(k)) = s.values().col(*c);
  }
  ingest::Record out = r;
  out.series = std::make_shared<MultivariateSeries>(std::move(v), s.fs(), names, s.patient_id());
  return out;
}

inline std::vector<ingest::Record> pick(const std::vector<ingest::Record>& all, const std::vector<std::string>& ids) {
  std::map<std::string, const ingest::Record*> by_id;
  for (const auto& r : all) by_id[r.id] = &r;
  std::vector<ingest::Record> out;
  for (const auto& id : ids) out.push_back(*by_id.at(id));
  return out;
}

inline Index distinct_patients(const std::vector<ingest::Record>& rs) {
  std::set<std::string> p;
  for (const auto& it : ingest::split_items(rs)) p.insert(it.patient);
  return static_cast<Index>(p.size());
}

}  // namespace detail

/// Loads, resamples, selects channels and splits into train / validation / test by patient.
inline Dataset load_dataset(const ExperimentConfig& c) {
  std::vector<ingest::Record> all =
      c.dataset.synthetic ? ingest::synth_dataset(*c.dataset.synthetic) : ingest::load_directory(c.dataset.path);
  if (all.empty()) throw std::runtime_error("dataset has no records: " + c.dataset.path);
  for (auto& r : all) {
    try {
      if (c.dataset.target_fs && *c.dataset.target_fs != r.series->fs()) r = ingest::downsample(r, *c.dataset.target_fs);
      r = detail::select_channels(r, c.dataset.channels);
      if (r.annotations.kind != detail::expected_kind(c.task)) {
        throw std::invalid_argument("annotations are " + ingest::to_string(r.annotations.kind) + ", task " +
                                    to_string(c.task) + " needs " + ingest::to_string(detail::expected_kind(c.task)));
      }
      r.annotations.validate(r.series->length());
      if (r.series->length() < c.model.window) {
        throw std::invalid_argument("series of " + std::to_string(r.series->length()) + " points is shorter than the window");
      }
      if (r.series->feature_names() != all.front().series->feature_names()) {
        throw std::invalid_argument("channels differ from record " + all.front().id);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("record " + r.id + ": " + e.what());
    }
  }
  Dataset d;
  d.id = c.dataset_id();
  d.description = c.dataset.description.empty() ? prompt::dataset_description(d.id) : c.dataset.description;
  const auto& sp = c.dataset.split;
  const auto outer = ingest::make_split(all, sp.strategy, sp.train_fraction, sp.seed);
  auto pool = detail::pick(all, outer.train_records);
  d.test = detail::pick(all, outer.test_records);
  if (sp.val_fraction > 0 && detail::distinct_patients(pool) >= 2) {
    const auto inner = ingest::make_split(pool, sp.strategy, 1.0 - sp.val_fraction, sp.seed + 1);
    d.train = detail::pick(pool, inner.train_records);
    d.val = detail::pick(pool, inner.test_records);
  } else {
    d.train = pool;
    d.val = pool;
    d.val_is_train = true;
  }
  return d;
}

inline std::shared_ptr<const backbone::FrozenBackbone> make_backbone(const BackboneSpec& b) {
  if (b.id == "pretrained") {
    return std::make_shared<const backbone::FrozenBackbone>(backbone::FrozenBackbone::from_pretrained(b.path));
  }
  backbone::BackboneConfig bc;
  bc.n_ctx = b.n_ctx;
  bc.d_model = b.d_model;
  bc.n_layers = b.n_layers;
  bc.n_heads = b.n_heads;
  return std::make_shared<const backbone::FrozenBackbone>(backbone::FrozenBackbone::toy(bc, b.seed, b.init_std));
}

/// Class count for semseg: the configured value, else max training label + 1.
inline Index resolve_classes(const ExperimentConfig& c, const Dataset& d) {
  if (c.task != TaskKind::semseg) return 0;
  if (c.model.n_classes) return *c.model.n_classes;
  int mx = 1;
  for (const auto& r : d.train)
    for (int l : r.annotations.labels) mx = std::max(mx, l);
  return mx + 1;
}

inline ModelShape resolve_shape(const ExperimentConfig& c, const Dataset& d) {
  ModelShape s;
  s.task = c.task;
  s.window = c.model.window;
  s.patch_len = c.model.patch_len;
  s.stride = c.model.stride;
  s.d_patch = c.model.d_patch;
  s.n_proto = c.model.n_proto;
  s.n_heads = c.model.n_heads;
  s.d_head = c.model.d_head;
  s.strategy = c.model.covariate_strategy;
  s.n_cov = d.train.front().series->channels();
  switch (c.task) {
    case TaskKind::semseg: {
      const Index k = resolve_classes(c, d);
      s.n_out = k == 2 ? 1 : k;
      break;
    }
    case TaskKind::boundary: s.n_out = 1; break;
    case TaskKind::anomaly: s.n_out = s.n_cov; break;
  }
  return s;
}

/// Window offsets tiling [0, T) with `step`, plus one end-aligned window when the tail is uncovered.
inline std::vector<Index> window_offsets(Index T, Index window, Index step) {
  if (window > T) throw std::invalid_argument("window longer than series");
  std::vector<Index> out;
  for (Index o = 0; o + window <= T; o += step) out.push_back(o);
  if (out.back() + window < T) out.push_back(T - window);
  return out;
}

// ---- logging ----------------------------------------------------------------

struct RunOptions {
  std::ostream* echo = nullptr;  // progress lines are mirrored here when set
  std::function<void(Index epoch, const backbone::FrozenBackbone&)> after_epoch;  // test hook
};

class RunLog {
 public:
  RunLog(const std::filesystem::path& path, std::ostream* echo) : f_(path, std::ios::app), echo_(echo) {
    if (!f_) throw std::runtime_error("cannot write run log: " + path.string());
  }
  void line(const std::string& s) {
    f_ << s << '\n';
    f_.flush();
    if (echo_) *echo_ << s << std::endl;
  }

 private:
  std::ofstream f_;
  std::ostream* echo_;
};

// ---- results ----------------------------------------------------------------

struct EpochLog {
  Index epoch = 0;
  double train_loss = 0;  // full pass over training windows after the epoch's updates
  double val_loss = 0;
  double batch_loss = 0;  // mean of the epoch's minibatch losses (0 for the initial row)
};

struct RecordBookkeeping {
  std::string record;
  Index n_text = 0;
  Index n_patch = 0;
  Index n_sequences = 0;
  Index seq_len = 0;
};

struct Calibration {
  Index distance = 0;
  Index heuristic_distance = 0;
  Index search_lo = 0, search_hi = 0;
  double search_value = 0;
  Eigen::RowVectorXd variance;
  tasks::ThresholdSpec threshold;

  nlohmann::json to_json(TaskKind task) const {
    nlohmann::json j = nlohmann::json::object();
    if (task == TaskKind::boundary) {
      j = {{"distance", distance}, {"heuristic_distance", heuristic_distance}, {"search_lo", search_lo},
           {"search_hi", search_hi}, {"search_value", search_value}};
    } else if (task == TaskKind::anomaly) {
      j = {{"variance", std::vector<double>(variance.data(), variance.data() + variance.size())},
           {"anomaly_ratio", threshold.anomaly_ratio},
           {"threshold", threshold.threshold},
           {"degenerate", threshold.degenerate}};
    }
    return j;
  }

  static Calibration from_json(TaskKind task, const nlohmann::json& j) {
    Calibration c;
    if (task == TaskKind::boundary) {
      c.distance = j.at("distance").get<Index>();
      c.heuristic_distance = j.at("heuristic_distance").get<Index>();
      c.search_lo = j.at("search_lo").get<Index>();
      c.search_hi = j.at("search_hi").get<Index>();
      c.search_value = j.at("search_value").get<double>();
    } else if (task == TaskKind::anomaly) {
      const auto v = j.at("variance").get<std::vector<double>>();
      c.variance = Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Index>(v.size()));
      c.threshold.anomaly_ratio = j.at("anomaly_ratio").get<double>();
      c.threshold.threshold = j.at("threshold").get<double>();
      c.threshold.degenerate = j.at("degenerate").get<bool>();
    }
    return c;
  }
};

struct EvalResult {
  metrics::MetricReport report;
  std::vector<std::string> records;
  std::vector<tasks::TaskPrediction> predictions;
  std::vector<RecordBookkeeping> bookkeeping;  // empty for baselines
  bool baseline = false;
};

struct RunArtifacts {
  std::filesystem::path output_dir;
  std::filesystem::path config_path;
  std::filesystem::path checkpoint_path;  // empty for baselines
  std::vector<EpochLog> history;          // row 0 is the initialized model
  Index best_epoch = 0;
  Index optimizer_steps = 0;
  nlohmann::json calibration = nlohmann::json::object();
  EvalResult eval;
  const metrics::MetricReport& report() const { return eval.report; }
};

// ---- neural engine -------------------------------------------------------------

/// Model plus per-record prompt caches for one experiment.
class Engine {
 public:
  struct Prepared {
    const ingest::Record* record = nullptr;
    backbone::PrefixCache prefix;
    Matrix boundary_target;  // T x 1 indicator, boundary task only
  };

  Engine(const ExperimentConfig& cfg, const Dataset& data, std::shared_ptr<const backbone::FrozenBackbone> bb)
      : cfg_(cfg), data_(data), bb_(std::move(bb)), model_(resolve_shape(cfg, data), bb_, cfg.train.seed) {
    for (const auto* split : {&data_.train, &data_.val, &data_.test})
      for (const auto& r : *split) prepare(r);
    if (cfg_.task == TaskKind::boundary) pos_weight_ = cfg_.train.pos_weight.value_or(auto_pos_weight());
  }

  MedTsModel& model() { return model_; }
  const MedTsModel& model() const { return model_; }
  double pos_weight() const { return pos_weight_; }
  const Prepared& prepared(const ingest::Record& r) const { return prepared_.at(r.id); }

  std::string prompt_for(const ingest::Record& r) const {
    const auto ctx = prompt::record_context(r, data_.description, cfg_.task, cfg_.model.window, cfg_.prompt);
    return prompt::build_prompt(ctx);
  }

  WindowOutput forward(ag::Tape& t, const Prepared& p, Index offset) const {
    return model_.forward(t, p.record->series->values().middleRows(offset, cfg_.model.window), p.prefix);
  }

  ag::Var window_loss(ag::Tape& t, const Prepared& p, Index offset) const {
    const auto out = forward(t, p, offset);
    const Index W = cfg_.model.window;
    switch (cfg_.task) {
      case TaskKind::semseg: {
        const auto& l = p.record->annotations.labels;
        return tasks::semseg_loss(out.raw, std::vector<int>(l.begin() + offset, l.begin() + offset + W));
      }
      case TaskKind::boundary: return ag::bce_with_logits(out.raw, p.boundary_target.middleRows(offset, W), pos_weight_);
      case TaskKind::anomaly: return ag::mse(out.raw, out.normalized);
    }
    throw std::logic_error("unknown task");
  }

  /// Training windows (record index, offset) in deterministic order.
  std::vector<std::pair<const Prepared*, Index>> windows(const std::vector<ingest::Record>& rs, Index step) const {
    std::vector<std::pair<const Prepared*, Index>> out;
    for (const auto& r : rs)
      for (Index o : window_offsets(r.series->length(), cfg_.model.window, step)) out.emplace_back(&prepared(r), o);
    return out;
  }

  double mean_loss(const std::vector<std::pair<const Prepared*, Index>>& ws) const {
    if (ws.empty()) throw std::invalid_argument("no windows to evaluate");
    double sum = 0;
    for (const auto& [p, o] : ws) {
      ag::Tape t;
      t.set_grad_enabled(false);
      sum += window_loss(t, *p, o).value()(0, 0);
    }
    return sum / static_cast<double>(ws.size());
  }

  /// Stitched raw output for a whole record (anomaly: reconstruction in input units).
  Matrix predict_raw(const ingest::Record& r, RecordBookkeeping* bk = nullptr) const {
    const auto& p = prepared(r);
    const Index T = r.series->length(), W = cfg_.model.window;
    const auto& shape = model_.shape();
    Matrix full(T, shape.n_out);
    Index filled = 0;
    for (Index o : window_offsets(T, W, W)) {
      ag::Tape t;
      t.set_grad_enabled(false);
      const auto out = forward(t, p, o);
      const Matrix y = cfg_.task == TaskKind::anomaly ? MedTsModel::denormalize(out.raw.value(), out.revin) : out.raw.value();
      // Overlapping points keep the earlier window's prediction.
      const Index from = std::max(filled, o);
      full.middleRows(from, o + W - from) = y.bottomRows(o + W - from);
      filled = o + W;
      if (bk) *bk = {r.id, out.n_text, out.n_patch, out.n_sequences, out.seq_len()};
    }
    return full;
  }

 private:
  void prepare(const ingest::Record& r) {
    if (prepared_.count(r.id)) return;
    Prepared p;
    p.record = &r;
    try {
      const auto text = bb_->embed_text(prompt_for(r), model_.shape().n_patch_positions());
      p.prefix = bb_->prefix_cache(text.embeddings);
      if (cfg_.task == TaskKind::boundary) {
        p.boundary_target = Matrix::Zero(r.series->length(), 1);
        for (Index b : r.annotations.points) p.boundary_target(b, 0) = 1.0;
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("record " + r.id + ": " + e.what());
    }
    prepared_.emplace(r.id, std::move(p));
  }

  double auto_pos_weight() const {
    double pos = 0, total = 0;
    for (const auto& r : data_.train) {
      pos += static_cast<double>(r.annotations.points.size());
      total += static_cast<double>(r.series->length());
    }
    return pos > 0 ? (total - pos) / pos : 1.0;
  }

  const ExperimentConfig& cfg_;
  const Dataset& data_;
  std::shared_ptr<const backbone::FrozenBackbone> bb_;
  MedTsModel model_;
  std::map<std::string, Prepared> prepared_;
  double pos_weight_ = 1.0;
};

// ---- post-processing ----------------------------------------------------------

namespace detail {

inline std::vector<double> sigmoid_column(const Matrix& raw) {
  std::vector<double> s(static_cast<std::size_t>(raw.rows()));
  for (Index i = 0; i < raw.rows(); ++i) s[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-raw(i, 0)));
  return s;
}

inline std::vector<std::uint8_t> gt_anomaly_mask(const ExperimentConfig& c, const ingest::Record& r) {
  return ingest::expand_anomaly_annotations(r.annotations.points, c.anomaly_window_ms(), r.series->fs(), r.series->length());
}

inline tasks::TaskPrediction post_process(const ExperimentConfig& c, const ingest::Record& r, Matrix raw,
                                          const Calibration& cal) {
  tasks::TaskPrediction p;
  p.task = c.task;
  switch (c.task) {
    case TaskKind::semseg: p.labels = tasks::semseg_decide(raw); break;
    case TaskKind::boundary:
      p.scores = sigmoid_column(raw);
      p.boundary_points = tasks::find_boundaries(p.scores, cal.distance);
      break;
    case TaskKind::anomaly:
      p.scores = tasks::anomaly_scores(r.series->values(), raw, cal.variance);
      p.anomaly_mask = tasks::apply_threshold(p.scores, cal.threshold);
      break;
  }
  p.raw = std::move(raw);
  return p;
}

inline metrics::Accumulator make_accumulator(const ExperimentConfig& c) {
  return metrics::Accumulator(c.task, static_cast<double>(c.metrics.boundary_tol), c.metrics.iou_tau);
}

inline void accumulate(metrics::Accumulator& acc, const ExperimentConfig& c, const ingest::Record& r, const tasks::TaskPrediction& p) {
  switch (c.task) {
    case TaskKind::semseg: acc.add_semseg(p.labels, r.annotations.labels); break;
    case TaskKind::boundary: acc.add_boundary(p.boundary_points, r.annotations.points, r.series->length()); break;
    case TaskKind::anomaly: acc.add_anomaly(p.scores, p.anomaly_mask, gt_anomaly_mask(c, r)); break;
  }
}

inline double boundary_objective(const metrics::MetricReport& r, const std::string& metric) {
  return metric == "mae" ? -r.at("mae") : r.at(metric);
}

}  // namespace detail

/// Distance for boundary peaks and anomaly normalizer / threshold, computed on the validation split.
inline Calibration calibrate(const ExperimentConfig& c, const Dataset& d, const Engine& e) {
  Calibration cal;
  if (c.task == TaskKind::boundary) {
    std::vector<Index> gaps;
    for (const auto& r : d.train) {
      const auto g = tasks::boundary_gaps(r.annotations.points);
      gaps.insert(gaps.end(), g.begin(), g.end());
    }
    cal.heuristic_distance = tasks::distance_heuristic(gaps);
    cal.distance = cal.heuristic_distance;
    cal.search_lo = c.boundary.search_lo;
    cal.search_hi = c.boundary.search_hi.value_or(std::max(c.boundary.search_lo, *std::max_element(gaps.begin(), gaps.end())));
    if (c.boundary.distance == "optimize") {
      std::vector<std::vector<double>> scores;
      for (const auto& r : d.val) scores.push_back(detail::sigmoid_column(e.predict_raw(r)));
      auto objective = [&](Index dist) {
        auto acc = detail::make_accumulator(c);
        for (std::size_t i = 0; i < d.val.size(); ++i) {
          const auto& r = d.val[i];
          acc.add_boundary(tasks::find_boundaries(scores[i], dist), r.annotations.points, r.series->length());
        }
        return detail::boundary_objective(acc.report(), c.boundary.metric);
      };
      const auto s = tasks::optimize_distance(objective, cal.search_lo, cal.search_hi, cal.heuristic_distance);
      cal.distance = s.distance;
      cal.search_value = s.value;
    }
  } else if (c.task == TaskKind::anomaly) {
    std::vector<Matrix> x, x_hat;
    for (const auto& r : d.val) {
      x.push_back(r.series->values());
      x_hat.push_back(e.predict_raw(r));
    }
    cal.variance = tasks::residual_variance(x, x_hat);
    std::vector<double> val_scores;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto s = tasks::anomaly_scores(x[i], x_hat[i], cal.variance);
      val_scores.insert(val_scores.end(), s.begin(), s.end());
    }
    cal.threshold = tasks::anomaly_threshold(val_scores, c.anomaly.anomaly_ratio);
  }
  return cal;
}

// ---- outputs ----------------------------------------------------------------

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

inline ingest::AnnotationSet to_annotations(const tasks::TaskPrediction& p) {
  switch (p.task) {
    case TaskKind::semseg: return ingest::AnnotationSet::from_labels(p.labels);
    case TaskKind::boundary: return ingest::AnnotationSet::from_points(ingest::AnnotationKind::boundary_points, p.boundary_points);
    case TaskKind::anomaly:
      return ingest::AnnotationSet::from_points(ingest::AnnotationKind::anomaly_points, ingest::mask_to_points(p.anomaly_mask));
  }
  return {};
}

inline void write_eval_outputs(const ExperimentConfig& c, const Dataset& d, const EvalResult& ev) {
  namespace fs = std::filesystem;
  const fs::path out(c.output_dir);
  fs::create_directories(out / "predictions");
  fs::create_directories(out / "plots");
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    const auto& r = d.test[i];
    const auto& p = ev.predictions[i];
    ingest::write_annotations(out / "predictions" / (r.id + ".pred.ann"), to_annotations(p));
    write_svg(out / "plots" / (r.id + ".svg"), r, p, c.task == TaskKind::anomaly ? gt_anomaly_mask(c, r) : std::vector<std::uint8_t>{});
  }
  write_text(out / "metrics.txt", ev.report.to_kv());
  std::string tsv = "metric\tvalue\n";
  for (const auto& k : ev.report.keys()) tsv += k + "\t" + ev.report.tsv_value(k) + "\n";
  write_text(out / "metrics.tsv", tsv);
  if (!ev.bookkeeping.empty()) {
    std::string bk = "record\tn_text\tn_patch\tn_sequences\tseq_len\n";
    for (const auto& b : ev.bookkeeping) {
      bk += b.record + "\t" + std::to_string(b.n_text) + "\t" + std::to_string(b.n_patch) + "\t" +
            std::to_string(b.n_sequences) + "\t" + std::to_string(b.seq_len) + "\n";
    }
    write_text(out / "bookkeeping.tsv", bk);
  }
}

/// Resolved config with data-dependent values filled in.
inline ExperimentConfig resolved(const ExperimentConfig& c, const Dataset& d) {
  ExperimentConfig r = c;
  if (c.task == TaskKind::semseg && !c.baseline) r.model.n_classes = resolve_classes(c, d);
  return r;
}

inline std::filesystem::path persist_config(const ExperimentConfig& c) {
  std::filesystem::create_directories(c.output_dir);
  const auto p = std::filesystem::path(c.output_dir) / "config.resolved.json";
  write_text(p, c.to_json().dump(2) + "\n");
  return p;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(8);
  os << v;
  return os.str();
}

inline EvalResult evaluate_baseline(const ExperimentConfig& c, const Dataset& d) {
  baselines::BaselineSpec spec{c.task, c.baseline->method, c.baseline->params};
  std::vector<ingest::Record> fit = d.train;
  if (!d.val_is_train) fit.insert(fit.end(), d.val.begin(), d.val.end());
  EvalResult ev;
  ev.baseline = true;
  ev.predictions = baselines::run_baseline(spec, fit, d.test);
  auto acc = make_accumulator(c);
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    accumulate(acc, c, d.test[i], ev.predictions[i]);
    ev.records.push_back(d.test[i].id);
  }
  ev.report = acc.report();
  return ev;
}

inline EvalResult evaluate_engine(const ExperimentConfig& c, const Dataset& d, const Engine& e, const Calibration& cal) {
  EvalResult ev;
  auto acc = make_accumulator(c);
  for (const auto& r : d.test) {
    try {
      RecordBookkeeping bk;
      auto p = post_process(c, r, e.predict_raw(r, &bk), cal);
      accumulate(acc, c, r, p);
      ev.records.push_back(r.id);
      ev.predictions.push_back(std::move(p));
      ev.bookkeeping.push_back(bk);
    } catch (const std::exception& ex) {
      throw std::runtime_error("record " + r.id + ": " + ex.what());
    }
  }
  ev.report = acc.report();
  return ev;
}

}  // namespace detail

// ---- train / evaluate ---------------------------------------------------------

/// Trains the heads, saves the best checkpoint, calibrates and evaluates the test split.
inline RunArtifacts train(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  namespace fs = std::filesystem;
  const Dataset data = load_dataset(cfg);
  const ExperimentConfig c = detail::resolved(cfg, data);
  RunArtifacts art;
  art.output_dir = c.output_dir;
  art.config_path = detail::persist_config(c);
  RunLog log(art.output_dir / "run.log", opts.echo);
  log.line("train " + to_string(c.task) + " on " + data.id + ": " + std::to_string(data.train.size()) + " train, " +
           std::to_string(data.val.size()) + " validation, " + std::to_string(data.test.size()) + " test records" +
           (data.val_is_train ? " (validation reuses the training records)" : ""));

  if (c.baseline) {
    log.line("baseline " + c.baseline->method + ": neural path skipped");
    art.eval = detail::evaluate_baseline(c, data);
    detail::write_eval_outputs(c, data, art.eval);
    log.line("test " + art.eval.report.to_kv());
    return art;
  }

  const auto bb = make_backbone(c.backbone);
  const std::string frozen = bb->checksum();
  Engine engine(c, data, bb);
  auto& model = engine.model();
  log.line("backbone " + c.backbone.id + " sha256=" + frozen + "; trainable parameters " +
           std::to_string(model.parameters().trainable_count()));

  const auto train_windows = engine.windows(data.train, c.train_stride());
  const auto val_windows = engine.windows(data.val, c.model.window);
  auto params = model.parameters().trainable();
  std::unique_ptr<ag::Optimizer> opt;
  if (c.train.optimizer == "ranger") {
    opt = std::make_unique<ag::Ranger>(params, c.train.lr, 0.95, 0.999, 1e-5, c.train.weight_decay);
  } else {
    opt = std::make_unique<ag::Adam>(params, c.train.lr, 0.9, 0.999, 1e-8, c.train.weight_decay);
  }

  std::ofstream tlog(art.output_dir / "train_log.tsv");
  tlog << "epoch\ttrain_loss\tval_loss\tbatch_loss\n";
  auto record_epoch = [&](EpochLog e) {
    art.history.push_back(e);
    tlog << e.epoch << '\t' << detail::fmt(e.train_loss) << '\t' << detail::fmt(e.val_loss) << '\t' << detail::fmt(e.batch_loss) << '\n';
    tlog.flush();
    log.line("epoch " + std::to_string(e.epoch) + " train_loss=" + detail::fmt(e.train_loss) +
             " val_loss=" + detail::fmt(e.val_loss));
  };
  record_epoch({0, engine.mean_loss(train_windows), engine.mean_loss(val_windows), 0.0});
  double best_val = art.history.back().val_loss;
  auto best_state = snapshot(model.parameters());

  std::mt19937_64 shuffle_rng(c.train.seed ^ 0x5DEECE66Dull);
  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto B = static_cast<std::size_t>(c.train.batch_size);
  for (Index epoch = 1; epoch <= c.train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double batch_sum = 0;
    Index batches = 0;
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t end = std::min(order.size(), start + B);
      model.parameters().zero_grad();
      ag::Tape t;
      std::vector<ag::Var> losses;
      for (std::size_t k = start; k < end; ++k) {
        const auto& [p, o] = train_windows[order[k]];
        losses.push_back(engine.window_loss(t, *p, o));
      }
      const ag::Var loss = losses.size() == 1 ? losses.front() : ag::mean_of(losses);
      t.backward(loss);
      opt->step();
      ++art.optimizer_steps;
      batch_sum += loss.value()(0, 0);
      ++batches;
    }
    if (opts.after_epoch) opts.after_epoch(epoch, *bb);
    if (bb->checksum() != frozen) {
      log.line("frozen backbone changed during epoch " + std::to_string(epoch) + "; aborting");
      throw FrozenBackboneViolation("frozen backbone weights changed during epoch " + std::to_string(epoch));
    }
    record_epoch({epoch, engine.mean_loss(train_windows), engine.mean_loss(val_windows),
                  batches ? batch_sum / static_cast<double>(batches) : 0.0});
    if (art.history.back().val_loss < best_val) {
      best_val = art.history.back().val_loss;
      best_state = snapshot(model.parameters());
      art.best_epoch = epoch;
    }
  }
  restore(model.parameters(), best_state);
  log.line("best epoch " + std::to_string(art.best_epoch) + " val_loss=" + detail::fmt(best_val));

  const Calibration cal = calibrate(c, data, engine);
  art.calibration = cal.to_json(c.task);
  if (c.task != TaskKind::semseg) log.line("calibration " + art.calibration.dump());

  Checkpoint ck;
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : art.history) history.push_back({e.epoch, e.train_loss, e.val_loss, e.batch_loss});
  ck.meta = {{"task", to_string(c.task)},
             {"shape", model.shape().to_json()},
             {"backbone", {{"id", c.backbone.id}, {"checksum", frozen}}},
             {"calibration", art.calibration},
             {"best_epoch", art.best_epoch},
             {"history", history},
             {"config", c.to_json()}};
  ck.tensors = snapshot(model.parameters());
  art.checkpoint_path = art.output_dir / "checkpoint.bin";
  save_checkpoint(art.checkpoint_path.string(), ck);
  log.line("saved " + art.checkpoint_path.string());

  art.eval = detail::evaluate_engine(c, data, engine, cal);
  detail::write_eval_outputs(c, data, art.eval);
  log.line("test " + art.eval.report.to_kv());
  return art;
}

/// Loads a checkpoint, checks it against the config and evaluates the test split.
inline EvalResult evaluate(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint, const RunOptions& opts = {}) {
  const Dataset data = load_dataset(cfg);
  const ExperimentConfig c = detail::resolved(cfg, data);
  std::filesystem::create_directories(c.output_dir);
  RunLog log(std::filesystem::path(c.output_dir) / "run.log", opts.echo);
  if (c.baseline) {
    log.line("evaluate baseline " + c.baseline->method + ": checkpoint ignored");
    auto ev = detail::evaluate_baseline(c, data);
    detail::write_eval_outputs(c, data, ev);
    return ev;
  }
  const auto ck = load_checkpoint(checkpoint.string());
  const auto meta_task = ck.meta.at("task").get<std::string>();
  if (meta_task != to_string(c.task)) {
    throw CheckpointMismatch("shape mismatch: checkpoint holds " + meta_task + " heads but the config task is " +
                             to_string(c.task));
  }
  const ModelShape want = resolve_shape(c, data);
  const ModelShape have = ModelShape::from_json(ck.meta.at("shape"));
  if (!(want == have)) {
    throw CheckpointMismatch("shape mismatch: checkpoint " + have.to_json().dump() + " vs config " + want.to_json().dump());
  }
  const auto bb = make_backbone(c.backbone);
  const auto sum = ck.meta.at("backbone").at("checksum").get<std::string>();
  if (bb->checksum() != sum) throw CheckpointMismatch("checkpoint was trained against a different backbone");
  Engine engine(c, data, bb);
  restore(engine.model().parameters(), ck.tensors);
  const auto cal = Calibration::from_json(c.task, ck.meta.at("calibration"));
  log.line("evaluate " + checkpoint.string());
  auto ev = detail::evaluate_engine(c, data, engine, cal);
  detail::write_eval_outputs(c, data, ev);
  log.line("test " + ev.report.to_kv());
  return ev;
}

// ---- sweeps ------------------------------------------------------------------

struct SweepRow {
  std::string arm;
  metrics::MetricReport report;
  Index n_text_min = 0, n_text_max = 0;
  double n_text_mean = 0;
  Index n_patch = 0;
  Index n_sequences = 0;
  Index seq_len_max = 0;
  std::vector<RecordBookkeeping> bookkeeping;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepRow> rows;
  std::filesystem::path table_path;
};

class SweepFailure : public std::runtime_error {
 public:
  SweepFailure(const std::string& what, SweepResult partial) : std::runtime_error(what), partial_(std::move(partial)) {}
  const SweepResult& partial() const { return partial_; }

 private:
  SweepResult partial_;
};

inline const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> a{"covariate_strategy", "prompt_flags", "backbone"};
  return a;
}

/// Default arms: every strategy, the six prompt arms, or the base backbone alone.
inline std::vector<std::string> default_arms(const ExperimentConfig& base, const std::string& axis) {
  std::vector<std::string> out;
  if (axis == "covariate_strategy") {
    for (auto s : encoder::all_strategies()) out.push_back(encoder::to_string(s));
  } else if (axis == "prompt_flags") {
    for (const auto& a : prompt::prompt_arms()) out.push_back(a.name);
  } else if (axis == "backbone") {
    out.push_back(base.backbone.id == "pretrained" ? base.backbone.path : base.backbone.id);
  } else {
    throw std::invalid_argument("unknown sweep axis: " + axis);
  }
  return out;
}

/// Config for one arm; backbone arms are toy ids or a pretrained directory.
inline ExperimentConfig arm_config(const ExperimentConfig& base, const std::string& axis, const std::string& arm) {
  nlohmann::json j = base.to_json();
  j["output_dir"] = (std::filesystem::path(base.output_dir) / arm).string();
  if (axis == "covariate_strategy") {
    j["model"]["covariate_strategy"] = encoder::to_string(encoder::parse_strategy(arm));
  } else if (axis == "prompt_flags") {
    const auto arms = prompt::prompt_arms();
    auto it = std::find_if(arms.begin(), arms.end(), [&](const auto& a) { return a.name == arm; });
    if (it == arms.end()) throw std::invalid_argument("unknown prompt arm: " + arm);
    j["prompt"] = {{"dataset", it->flags.dataset}, {"patient", it->flags.patient}, {"stats", it->flags.stats}, {"task", it->flags.task}};
  } else if (axis == "backbone") {
    if (arm.rfind("toy", 0) == 0) {
      j["backbone"]["id"] = arm;
      j["backbone"]["path"] = "";
    } else {
      j["backbone"]["id"] = "pretrained";
      j["backbone"]["path"] = arm;
    }
    j["output_dir"] = (std::filesystem::path(base.output_dir) / std::filesystem::path(arm).filename()).string();
  } else {
    throw std::invalid_argument("unknown sweep axis: " + axis);
  }
  if (base.task == TaskKind::semseg && !base.model.n_classes) j["model"]["n_classes"] = nullptr;
  return parse_config(j);
}

inline SweepRow summarize_arm(const std::string& arm, const RunArtifacts& a) {
  SweepRow row;
  row.arm = arm;
  row.report = a.report();
  row.bookkeeping = a.eval.bookkeeping;
  if (!row.bookkeeping.empty()) {
    row.n_text_min = row.n_text_max = row.bookkeeping.front().n_text;
    double sum = 0;
    for (const auto& b : row.bookkeeping) {
      row.n_text_min = std::min(row.n_text_min, b.n_text);
      row.n_text_max = std::max(row.n_text_max, b.n_text);
      row.seq_len_max = std::max(row.seq_len_max, b.seq_len);
      sum += static_cast<double>(b.n_text);
    }
    row.n_text_mean = sum / static_cast<double>(row.bookkeeping.size());
    row.n_patch = row.bookkeeping.front().n_patch;
    row.n_sequences = row.bookkeeping.front().n_sequences;
  }
  return row;
}

inline std::string sweep_table(const SweepResult& s) {
  std::vector<std::string> keys;
  for (const auto& r : s.rows)
    for (const auto& k : r.report.keys())
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  std::string out = s.axis + "\tn_text_mean\tn_text_min\tn_text_max\tn_patch\tn_sequences\tseq_len_max";
  for (const auto& k : keys) out += "\t" + k;
  out += "\n";
  for (const auto& r : s.rows) {
    out += r.arm + "\t" + detail::fmt(r.n_text_mean) + "\t" + std::to_string(r.n_text_min) + "\t" +
           std::to_string(r.n_text_max) + "\t" + std::to_string(r.n_patch) + "\t" + std::to_string(r.n_sequences) + "\t" +
           std::to_string(r.seq_len_max);
    for (const auto& k : keys) out += "\t" + r.report.tsv_value(k);
    out += "\n";
  }
  return out;
}

/// One training run per arm with the base seed; the table is rewritten after every arm.
inline SweepResult sweep(const ExperimentConfig& base, const std::string& axis, std::vector<std::string> arms = {},
                         const RunOptions& opts = {}) {
  if (std::find(sweep_axes().begin(), sweep_axes().end(), axis) == sweep_axes().end()) {
    throw std::invalid_argument("unknown sweep axis: " + axis);
  }
  if (arms.empty()) arms = default_arms(base, axis);
  SweepResult res;
  res.axis = axis;
  std::filesystem::create_directories(base.output_dir);
  res.table_path = std::filesystem::path(base.output_dir) / ("sweep_" + axis + ".tsv");
  for (const auto& arm : arms) {
    try {
      const auto cfg = arm_config(base, axis, arm);
      res.rows.push_back(summarize_arm(arm, train(cfg, opts)));
      detail::write_text(res.table_path, sweep_table(res));
    } catch (const std::exception& e) {
      detail::write_text(res.table_path, sweep_table(res));
      throw SweepFailure("sweep arm " + arm + " failed: " + e.what(), res);
    }
  }
  return res;
}

}  // namespace medts::runner
