#pragma once

#include "medts/core/task_kind.hpp"
#include "medts/ingest/record.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::prompt {

enum class Component { dataset, patient, stats, task };

/// Which components are rendered; order is always dataset, patient, stats, task.
struct PromptFlags {
  bool dataset = true;
  bool patient = true;
  bool stats = true;
  bool task = true;

  static PromptFlags none() { return {false, false, false, false}; }
  static PromptFlags only(Component c) {
    PromptFlags f = none();
    f.set(c, true);
    return f;
  }
  bool get(Component c) const {
    switch (c) {
      case Component::dataset: return dataset;
      case Component::patient: return patient;
      case Component::stats: return stats;
      case Component::task: return task;
    }
    return false;
  }
  void set(Component c, bool on) {
    switch (c) {
      case Component::dataset: dataset = on; break;
      case Component::patient: patient = on; break;
      case Component::stats: stats = on; break;
      case Component::task: task = on; break;
    }
  }
  bool operator==(const PromptFlags&) const = default;
};

inline const std::vector<Component>& component_order() {
  static const std::vector<Component> v{Component::dataset, Component::patient, Component::stats, Component::task};
  return v;
}

inline std::string to_string(Component c) {
  switch (c) {
    case Component::dataset: return "dataset";
    case Component::patient: return "patient";
    case Component::stats: return "stats";
    case Component::task: return "task";
  }
  return "?";
}

inline Component parse_component(const std::string& s) {
  for (auto c : component_order())
    if (to_string(c) == s) return c;
  throw std::invalid_argument("unknown prompt component: " + s);
}

/// Named ablation arms: none, dataset, task, patient, stats, all.
struct PromptArm {
  std::string name;
  PromptFlags flags;
};

inline std::vector<PromptArm> prompt_arms() {
  return {{"none", PromptFlags::none()},
          {"dataset", PromptFlags::only(Component::dataset)},
          {"task", PromptFlags::only(Component::task)},
          {"patient", PromptFlags::only(Component::patient)},
          {"stats", PromptFlags::only(Component::stats)},
          {"all", PromptFlags{}}};
}

/// Fixed-format number: 6 significant digits, no trailing zeros.
inline std::string format_number(double v) {
  if (v == 0) v = 0;  // drop negative zero
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

namespace detail {

inline std::string scalar(const nlohmann::json& v) {
  if (v.is_number_float()) return format_number(v.get<double>());
  return v.dump();
}

}  // namespace detail

/// JSON object with sorted keys and ", " / ": " separators. Values: scalars or flat lists.
inline std::string encode_patient_json(const nlohmann::json& patient) {
  if (!patient.is_object()) throw std::invalid_argument("patient info must be a JSON object");
  std::vector<std::string> keys;
  for (auto it = patient.begin(); it != patient.end(); ++it) keys.push_back(it.key());
  std::sort(keys.begin(), keys.end());
  std::string out = "{";
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& v = patient.at(keys[i]);
    if (i) out += ", ";
    out += nlohmann::json(keys[i]).dump() + ": ";
    if (v.is_object()) throw std::invalid_argument("nested patient field '" + keys[i] + "'");
    if (v.is_array()) {
      out += "[";
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (v[k].is_structured()) throw std::invalid_argument("nested patient field '" + keys[i] + "'");
        out += (k ? ", " : "") + detail::scalar(v[k]);
      }
      out += "]";
    } else {
      out += detail::scalar(v);
    }
  }
  return out + "}";
}

enum class Trend { rising, falling, flat };

inline std::string to_string(Trend t) {
  return t == Trend::rising ? "rising" : t == Trend::falling ? "falling" : "flat";
}

struct SignalSummary {
  std::string signal;
  double min = 0, max = 0, mean = 0;
  double slope = 0;  // least squares, per step
  Trend trend = Trend::flat;

  std::string render() const {
    return signal + ": min=" + format_number(min) + ", max=" + format_number(max) + ", mean=" + format_number(mean) +
           ", trend=" + to_string(trend);
  }
};

inline SignalSummary summarize_signal(const std::string& name, const std::vector<double>& v,
                                      double slope_threshold = 1e-6) {
  if (v.empty()) throw std::invalid_argument("empty low-frequency signal '" + name + "'");
  SignalSummary s;
  s.signal = name;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() > 1) {
    const double tbar = (n - 1) / 2;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      num += (static_cast<double>(i) - tbar) * (v[i] - s.mean);
      den += (static_cast<double>(i) - tbar) * (static_cast<double>(i) - tbar);
    }
    s.slope = num / den;
  }
  s.trend = s.slope > slope_threshold ? Trend::rising : s.slope < -slope_threshold ? Trend::falling : Trend::flat;
  return s;
}

/// One summary per signal; every signal must be sampled below `fs_threshold`.
inline std::vector<SignalSummary> summarize_low_freq(const std::vector<ingest::LowFreqSignal>& signals,
                                                     double fs_threshold = 1.0) {
  std::vector<SignalSummary> out;
  for (const auto& s : signals) {
    if (!(s.fs < fs_threshold)) {
      throw std::invalid_argument("signal '" + s.name + "' is sampled at or above " + format_number(fs_threshold) + " Hz");
    }
    out.push_back(summarize_signal(s.name, s.values));
  }
  return out;
}

inline std::string render_stats(const std::vector<SignalSummary>& stats) {
  std::string out;
  for (std::size_t i = 0; i < stats.size(); ++i) out += (i ? "; " : "") + stats[i].render();
  return out;
}

/// Built-in descriptions keyed by dataset id; unknown ids yield an empty string.
inline std::string dataset_description(const std::string& dataset) {
  if (dataset == "ventilator") {
    return "Airway pressure (cmH2O) and flow (L/min) waveforms recorded by a mechanical ventilator supporting a "
           "sedated patient, sampled at 100 Hz.";
  }
  if (dataset == "ludb") {
    return "Lobachevsky University ECG database: 10 s single-lead ECG clips at 500 Hz from patients with assorted "
           "cardiovascular conditions, with cardiologist-marked P wave, QRS complex and T wave boundaries.";
  }
  if (dataset == "bidmc") {
    return "BIDMC ICU recordings combining ECG, pulse oximetry, PPG and impedance pneumography, with individual "
           "breaths marked by two annotators on the impedance respiration channel.";
  }
  if (dataset == "mitbih") {
    return "MIT-BIH arrhythmia recordings: two-lead ambulatory ECG from inpatients and outpatients, 360 Hz per "
           "channel, 11-bit resolution over 10 mV.";
  }
  if (dataset == "synthetic_semseg") {
    return "Simulated ventilator flow, pressure and volume waveforms; each breath has an inspiratory and an "
           "expiratory phase.";
  }
  if (dataset == "synthetic_boundary") {
    return "Simulated respiration with companion channels; each breath starts at a respiration crest.";
  }
  if (dataset == "synthetic_anomaly") {
    return "Simulated quasi-periodic multichannel waveform that may contain spikes and signal dropouts.";
  }
  return {};
}

inline std::string task_instruction(TaskKind task, Index window) {
  const std::string n = std::to_string(window);
  switch (task) {
    case TaskKind::semseg: return "Assign a segment class to each of the last " + n + " samples.";
    case TaskKind::boundary: return "Locate the boundaries between consecutive cycles within the last " + n + " samples.";
    case TaskKind::anomaly: return "Reconstruct the last " + n + " samples so that unusual points stand out.";
  }
  return {};
}

struct PromptContext {
  std::string dataset_desc;
  nlohmann::json patient_info = nlohmann::json::object();
  std::vector<SignalSummary> stats;
  std::string task_instruction;
  PromptFlags enabled;
};

/// Enabled components in fixed order, newline-separated; empty components are skipped.
inline std::string build_prompt(const PromptContext& ctx) {
  std::vector<std::string> parts;
  for (auto c : component_order()) {
    if (!ctx.enabled.get(c)) continue;
    std::string text;
    switch (c) {
      case Component::dataset: text = ctx.dataset_desc; break;
      case Component::patient: text = encode_patient_json(ctx.patient_info); break;
      case Component::stats: text = render_stats(ctx.stats); break;
      case Component::task: text = ctx.task_instruction; break;
    }
    if (!text.empty()) parts.push_back(std::move(text));
  }
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "\n" : "") + parts[i];
  return out;
}

/// Context for one record.
inline PromptContext record_context(const ingest::Record& r, const std::string& dataset_desc, TaskKind task,
                                    Index window, PromptFlags flags) {
  PromptContext ctx;
  ctx.dataset_desc = dataset_desc;
  ctx.patient_info = r.patient;
  ctx.stats = summarize_low_freq(r.low_freq);
  ctx.task_instruction = task_instruction(task, window);
  ctx.enabled = flags;
  return ctx;
}

}  // namespace medts::prompt
