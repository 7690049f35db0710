#pragma once

// Experiment configuration, schema version 1 (JSON). Unknown keys are rejected
// at every level; omitted keys take the defaults below. See README for the
// field reference.

#include "medts/core/task_kind.hpp"
#include "medts/encoder/covariate.hpp"
#include "medts/ingest/split.hpp"
#include "medts/ingest/synth.hpp"
#include "medts/prompt/prompt.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::runner {

inline constexpr int kConfigVersion = 1;

/// Raised for any schema violation; the message names the offending key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SplitConfig {
  ingest::SplitStrategy strategy = ingest::SplitStrategy::random_by_patient;
  double train_fraction = 0.8;
  double val_fraction = 0.2;  // share of the training patients held out for validation
  std::uint64_t seed = 0;
};

struct DatasetConfig {
  std::string id;           // picks the built-in description; defaults to "synthetic_<task>" or the directory name
  std::string description;  // overrides the built-in description when non-empty
  std::string path;         // directory of CSV records (see the convert command); empty means synthetic
  std::vector<std::string> channels;  // empty means all channels
  std::optional<ingest::SynthConfig> synthetic;
  SplitConfig split;
  std::optional<double> target_fs;
  std::optional<double> anomaly_window_ms;  // unset: 150 for record directories, 0 for synthetic data
};

struct BackboneSpec {
  std::string id = "toy";  // "toy", "toy-<d_model>x<n_layers>" or "pretrained"
  std::string path;        // directory for "pretrained"
  Index d_model = 16;
  Index n_layers = 2;
  Index n_heads = 2;
  Index n_ctx = 1024;
  std::uint64_t seed = 0;
  double init_std = 0.02;
};

struct ModelConfig {
  Index window = 256;
  Index patch_len = 16;
  Index stride = 8;
  Index d_patch = 32;
  Index n_proto = 32;
  Index n_heads = 4;
  Index d_head = 8;
  encoder::CovariateStrategy covariate_strategy = encoder::CovariateStrategy::concatenate;
  std::optional<Index> n_classes;  // semseg; inferred from training labels when unset
};

struct TrainConfig {
  Index epochs = 10;
  double lr = 1e-4;
  Index batch_size = 1;
  std::uint64_t seed = 0;
  std::string optimizer = "adam";  // adam or ranger
  double weight_decay = 0.0;
  std::optional<Index> train_stride;  // window step for training windows; unset means window / 2
  std::optional<double> pos_weight;   // boundary BCE weight on positives; unset means negatives / positives
};

struct BoundaryTaskConfig {
  std::string distance = "optimize";  // optimize or heuristic
  std::string metric = "miou";        // miou, boundary_accuracy, accuracy_at_iou or mae
  Index search_lo = 2;
  std::optional<Index> search_hi;  // unset means the largest training gap
};

struct AnomalyTaskConfig {
  double anomaly_ratio = 0.1;
};

struct MetricsConfig {
  Index boundary_tol = 50;
  double iou_tau = 0.75;
};

struct BaselineConfig {
  std::string method;
  nlohmann::json params = nlohmann::json::object();
};

struct ExperimentConfig {
  int version = kConfigVersion;
  TaskKind task = TaskKind::semseg;
  DatasetConfig dataset;
  BackboneSpec backbone;
  ModelConfig model;
  prompt::PromptFlags prompt;
  TrainConfig train;
  BoundaryTaskConfig boundary;
  AnomalyTaskConfig anomaly;
  MetricsConfig metrics;
  std::optional<BaselineConfig> baseline;
  std::string output_dir = "runs/default";

  std::string dataset_id() const {
    if (!dataset.id.empty()) return dataset.id;
    if (dataset.path.empty()) return "synthetic_" + to_string(task);
    return std::filesystem::path(dataset.path).filename().string();
  }

  double anomaly_window_ms() const {
    if (dataset.anomaly_window_ms) return *dataset.anomaly_window_ms;
    return dataset.path.empty() ? 0.0 : 150.0;
  }

  Index train_stride() const { return train.train_stride.value_or(std::max<Index>(1, model.window / 2)); }

  void validate() const;
  nlohmann::json to_json() const;
};

namespace detail {

/// Walks one JSON object, rejecting keys that are never read.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    T v{};
    read(key, v);
    out = v;
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), where(key));
  }

  const nlohmann::json& raw(const std::string& key) const { return j_.at(key); }
  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key: " + where(it.key()));
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline ingest::SynthConfig default_synth(TaskKind task) {
  ingest::SynthConfig c;
  c.task = task;
  if (task == TaskKind::boundary) c.phase_offset = 7;
  return c;
}

inline ingest::SynthConfig parse_synth(Section s, TaskKind task) {
  auto c = default_synth(task);
  s.read("n_records", c.n_records);
  s.read("T", c.T);
  s.read("fs", c.fs);
  s.read("n_cov", c.n_cov);
  s.read("noise_sd", c.noise_sd);
  s.read("seed", c.seed);
  s.read("period", c.period);
  s.read("period_jitter", c.period_jitter);
  s.read("phase_offset", c.phase_offset);
  s.read("inspiration_fraction", c.inspiration_fraction);
  s.read("anomalies_per_record", c.anomalies_per_record);
  s.read("n_clean", c.n_clean);
  s.read("dropout_len", c.dropout_len);
  s.read("spike_amplitude", c.spike_amplitude);
  s.finish();
  return c;
}

inline nlohmann::json synth_to_json(const ingest::SynthConfig& c) {
  return {{"n_records", c.n_records},
          {"T", c.T},
          {"fs", c.fs},
          {"n_cov", c.n_cov},
          {"noise_sd", c.noise_sd},
          {"seed", c.seed},
          {"period", c.period},
          {"period_jitter", c.period_jitter},
          {"phase_offset", c.phase_offset},
          {"inspiration_fraction", c.inspiration_fraction},
          {"anomalies_per_record", c.anomalies_per_record},
          {"n_clean", c.n_clean},
          {"dropout_len", c.dropout_len},
          {"spike_amplitude", c.spike_amplitude}};
}

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace detail

/// Parses and validates a config document.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::Section root(j, "");
  root.read("version", c.version);
  if (c.version != kConfigVersion) throw ConfigError("unsupported config version " + std::to_string(c.version));
  if (!root.has("task")) throw ConfigError("missing required key: task");
  try {
    c.task = parse_task(root.raw("task").get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("task: ") + e.what());
  }
  if (c.task == TaskKind::anomaly) c.dataset.split.strategy = ingest::SplitStrategy::anomaly_sorted;

  if (root.has("dataset")) {
    auto s = root.sub("dataset");
    s.read("id", c.dataset.id);
    s.read("description", c.dataset.description);
    s.read("path", c.dataset.path);
    s.read("channels", c.dataset.channels);
    s.read("target_fs", c.dataset.target_fs);
    s.read("anomaly_window_ms", c.dataset.anomaly_window_ms);
    if (s.has("synthetic")) c.dataset.synthetic = detail::parse_synth(s.sub("synthetic"), c.task);
    if (s.has("split")) {
      auto sp = s.sub("split");
      std::string strategy;
      sp.read("strategy", strategy);
      if (!strategy.empty()) {
        try {
          c.dataset.split.strategy = ingest::parse_split_strategy(strategy);
        } catch (const std::exception& e) {
          throw ConfigError(sp.where("strategy") + ": " + e.what());
        }
      }
      sp.read("train_fraction", c.dataset.split.train_fraction);
      sp.read("val_fraction", c.dataset.split.val_fraction);
      sp.read("seed", c.dataset.split.seed);
      sp.finish();
    }
    s.finish();
  }
  if (c.dataset.path.empty() && !c.dataset.synthetic) c.dataset.synthetic = detail::default_synth(c.task);

  if (root.has("backbone")) {
    auto s = root.sub("backbone");
    s.read("id", c.backbone.id);
    s.read("path", c.backbone.path);
    s.read("d_model", c.backbone.d_model);
    s.read("n_layers", c.backbone.n_layers);
    s.read("n_heads", c.backbone.n_heads);
    s.read("n_ctx", c.backbone.n_ctx);
    s.read("seed", c.backbone.seed);
    s.read("init_std", c.backbone.init_std);
    s.finish();
  }
  static const std::regex toy_re(R"(toy-(\d+)x(\d+))");
  std::smatch m;
  if (std::regex_match(c.backbone.id, m, toy_re)) {
    c.backbone.d_model = std::stoll(m[1]);
    c.backbone.n_layers = std::stoll(m[2]);
  }

  if (root.has("model")) {
    auto s = root.sub("model");
    s.read("window", c.model.window);
    s.read("patch_len", c.model.patch_len);
    s.read("stride", c.model.stride);
    s.read("d_patch", c.model.d_patch);
    s.read("n_proto", c.model.n_proto);
    s.read("n_heads", c.model.n_heads);
    s.read("d_head", c.model.d_head);
    s.read("n_classes", c.model.n_classes);
    std::string strategy;
    s.read("covariate_strategy", strategy);
    if (!strategy.empty()) {
      try {
        c.model.covariate_strategy = encoder::parse_strategy(strategy);
      } catch (const std::exception& e) {
        throw ConfigError(s.where("covariate_strategy") + ": " + e.what());
      }
    }
    s.finish();
  }

  if (root.has("prompt")) {
    auto s = root.sub("prompt");
    s.read("dataset", c.prompt.dataset);
    s.read("patient", c.prompt.patient);
    s.read("stats", c.prompt.stats);
    s.read("task", c.prompt.task);
    s.finish();
  }

  if (root.has("train")) {
    auto s = root.sub("train");
    s.read("epochs", c.train.epochs);
    s.read("lr", c.train.lr);
    s.read("batch_size", c.train.batch_size);
    s.read("seed", c.train.seed);
    s.read("optimizer", c.train.optimizer);
    s.read("weight_decay", c.train.weight_decay);
    s.read("train_stride", c.train.train_stride);
    s.read("pos_weight", c.train.pos_weight);
    s.finish();
  }

  if (root.has("tasks")) {
    auto s = root.sub("tasks");
    if (s.has("boundary")) {
      auto b = s.sub("boundary");
      b.read("distance", c.boundary.distance);
      b.read("metric", c.boundary.metric);
      b.read("search_lo", c.boundary.search_lo);
      b.read("search_hi", c.boundary.search_hi);
      b.finish();
    }
    if (s.has("anomaly")) {
      auto a = s.sub("anomaly");
      a.read("anomaly_ratio", c.anomaly.anomaly_ratio);
      a.finish();
    }
    s.finish();
  }

  if (root.has("metrics")) {
    auto s = root.sub("metrics");
    s.read("boundary_tol", c.metrics.boundary_tol);
    s.read("iou_tau", c.metrics.iou_tau);
    s.finish();
  }

  if (root.has("baseline")) {
    auto s = root.sub("baseline");
    BaselineConfig b;
    s.read("method", b.method);
    if (s.has("params")) b.params = s.raw("params");
    s.finish();
    c.baseline = b;
  }

  root.read("output_dir", c.output_dir);
  root.finish();
  c.validate();
  return c;
}

inline void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(dataset.path.empty() != !dataset.synthetic.has_value(), "dataset needs exactly one of path or synthetic");
  if (dataset.synthetic) {
    need(dataset.synthetic->task == task, "dataset.synthetic task must match the experiment task");
    try {
      dataset.synthetic->validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("dataset.synthetic: ") + e.what());
    }
  }
  need(dataset.split.train_fraction > 0 && dataset.split.train_fraction < 1, "dataset.split.train_fraction must lie in (0, 1)");
  need(dataset.split.val_fraction >= 0 && dataset.split.val_fraction < 1, "dataset.split.val_fraction must lie in [0, 1)");
  need(!dataset.target_fs || *dataset.target_fs > 0, "dataset.target_fs must be positive");
  need(!dataset.anomaly_window_ms || *dataset.anomaly_window_ms >= 0, "dataset.anomaly_window_ms must be non-negative");

  static const std::regex toy_re(R"(toy(-\d+x\d+)?)");
  need(std::regex_match(backbone.id, toy_re) || backbone.id == "pretrained",
       "backbone.id must be toy, toy-<d_model>x<n_layers> or pretrained");
  need(backbone.id != "pretrained" || !backbone.path.empty(), "backbone.path is required for a pretrained backbone");
  need(backbone.d_model > 0 && backbone.n_layers > 0 && backbone.n_heads > 0 && backbone.n_ctx > 0,
       "backbone dimensions must be positive");
  need(backbone.d_model % backbone.n_heads == 0, "backbone.d_model must be divisible by backbone.n_heads");
  need(backbone.init_std > 0, "backbone.init_std must be positive");

  need(model.window >= 1 && model.patch_len >= 1 && model.stride >= 1, "model window, patch_len and stride must be positive");
  need(model.patch_len <= model.window, "model.patch_len exceeds model.window");
  need(model.d_patch > 0 && model.n_proto > 0 && model.n_heads > 0 && model.d_head > 0, "model widths must be positive");
  need(!model.n_classes || *model.n_classes >= 2, "model.n_classes must be at least 2");

  need(train.epochs >= 0, "train.epochs must be non-negative");
  need(train.lr > 0, "train.lr must be positive");
  need(train.batch_size >= 1, "train.batch_size must be positive");
  need(train.optimizer == "adam" || train.optimizer == "ranger", "train.optimizer must be adam or ranger");
  need(train.weight_decay >= 0, "train.weight_decay must be non-negative");
  need(!train.train_stride || *train.train_stride >= 1, "train.train_stride must be positive");
  need(!train.pos_weight || *train.pos_weight > 0, "train.pos_weight must be positive");

  need(boundary.distance == "optimize" || boundary.distance == "heuristic", "tasks.boundary.distance must be optimize or heuristic");
  static const std::set<std::string> bmetrics{"miou", "boundary_accuracy", "accuracy_at_iou", "mae"};
  need(bmetrics.count(boundary.metric) == 1, "tasks.boundary.metric must be miou, boundary_accuracy, accuracy_at_iou or mae");
  need(boundary.search_lo >= 1, "tasks.boundary.search_lo must be at least 1");
  need(!boundary.search_hi || *boundary.search_hi >= boundary.search_lo, "tasks.boundary.search_hi is below search_lo");
  need(anomaly.anomaly_ratio > 0 && anomaly.anomaly_ratio < 1, "tasks.anomaly.anomaly_ratio must lie in (0, 1)");

  need(metrics.boundary_tol >= 0, "metrics.boundary_tol must be non-negative");
  need(metrics.iou_tau > 0 && metrics.iou_tau <= 1, "metrics.iou_tau must lie in (0, 1]");
  need(!baseline || !baseline->method.empty(), "baseline.method is required");
  need(!baseline || baseline->params.is_object(), "baseline.params must be an object");
  need(!output_dir.empty(), "output_dir must not be empty");
}

/// Fully resolved document; parse_config(to_json()) reproduces the config.
inline nlohmann::json ExperimentConfig::to_json() const {
  using detail::opt;
  nlohmann::json ds = {{"id", dataset.id},
                       {"description", dataset.description},
                       {"path", dataset.path},
                       {"channels", dataset.channels},
                       {"split",
                        {{"strategy", ingest::to_string(dataset.split.strategy)},
                         {"train_fraction", dataset.split.train_fraction},
                         {"val_fraction", dataset.split.val_fraction},
                         {"seed", dataset.split.seed}}},
                       {"target_fs", opt(dataset.target_fs)},
                       {"anomaly_window_ms", anomaly_window_ms()}};
  if (dataset.synthetic) ds["synthetic"] = detail::synth_to_json(*dataset.synthetic);
  nlohmann::json j = {
      {"version", version},
      {"task", to_string(task)},
      {"dataset", ds},
      {"backbone",
       {{"id", backbone.id},
        {"path", backbone.path},
        {"d_model", backbone.d_model},
        {"n_layers", backbone.n_layers},
        {"n_heads", backbone.n_heads},
        {"n_ctx", backbone.n_ctx},
        {"seed", backbone.seed},
        {"init_std", backbone.init_std}}},
      {"model",
       {{"window", model.window},
        {"patch_len", model.patch_len},
        {"stride", model.stride},
        {"d_patch", model.d_patch},
        {"n_proto", model.n_proto},
        {"n_heads", model.n_heads},
        {"d_head", model.d_head},
        {"covariate_strategy", encoder::to_string(model.covariate_strategy)},
        {"n_classes", opt(model.n_classes)}}},
      {"prompt", {{"dataset", prompt.dataset}, {"patient", prompt.patient}, {"stats", prompt.stats}, {"task", prompt.task}}},
      {"train",
       {{"epochs", train.epochs},
        {"lr", train.lr},
        {"batch_size", train.batch_size},
        {"seed", train.seed},
        {"optimizer", train.optimizer},
        {"weight_decay", train.weight_decay},
        {"train_stride", train_stride()},
        {"pos_weight", opt(train.pos_weight)}}},
      {"tasks",
       {{"boundary",
         {{"distance", boundary.distance},
          {"metric", boundary.metric},
          {"search_lo", boundary.search_lo},
          {"search_hi", opt(boundary.search_hi)}}},
        {"anomaly", {{"anomaly_ratio", anomaly.anomaly_ratio}}}}},
      {"metrics", {{"boundary_tol", metrics.boundary_tol}, {"iou_tau", metrics.iou_tau}}},
      {"output_dir", output_dir}};
  if (baseline) j["baseline"] = {{"method", baseline->method}, {"params", baseline->params}};
  return j;
}

/// Environment overrides: MEDTS_OUTPUT_ROOT prefixes a relative output_dir, MEDTS_SEED replaces train.seed.
inline void apply_env_overrides(ExperimentConfig& c) {
  if (const char* root = std::getenv("MEDTS_OUTPUT_ROOT"); root && *root) {
    const std::filesystem::path out(c.output_dir);
    if (out.is_relative()) c.output_dir = (std::filesystem::path(root) / out).string();
  }
  if (const char* seed = std::getenv("MEDTS_SEED"); seed && *seed) {
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(seed, &pos);
      if (pos != std::string(seed).size()) throw std::invalid_argument("trailing characters");
      c.train.seed = v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("MEDTS_SEED is not an unsigned integer: ") + seed);
    }
  }
}

/// Reads a config file and applies environment overrides.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  auto c = parse_config(j);
  apply_env_overrides(c);
  return c;
}

}  // namespace medts::runner
