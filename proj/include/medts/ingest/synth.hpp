#pragma once

// Deterministic synthetic datasets for each task.
//
// semseg:   ventilator-like flow/pressure/volume with labels 0 = inspiration, 1 = expiration.
// boundary: quasi-periodic respiration whose crest marks each period start, plus phase-shifted companions.
// anomaly:  quasi-periodic multichannel signal; the first n_clean records are clean, the rest carry
//           injected spikes and dropouts whose points form the ground truth.

#include "medts/core/task_kind.hpp"
#include "medts/ingest/record.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::ingest {

struct SynthConfig {
  TaskKind task = TaskKind::semseg;
  Index n_records = 10;
  Index T = 2048;
  double fs = 50.0;
  Index n_cov = 3;
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  Index period = 50;         // points
  Index period_jitter = 0;   // each period drawn uniformly from [period - jitter, period + jitter]
  Index phase_offset = 0;    // first period start (boundary)
  double inspiration_fraction = 0.35;
  Index anomalies_per_record = 6;
  Index n_clean = -1;        // anomaly: clean records; -1 means round(0.8 * n_records)
  Index dropout_len = 8;
  double spike_amplitude = 4.0;

  void validate() const {
    if (n_records < 1) throw std::invalid_argument("n_records must be positive");
    if (T < 2) throw std::invalid_argument("T must be at least 2");
    if (!(fs > 0)) throw std::invalid_argument("fs must be positive");
    if (n_cov < 1) throw std::invalid_argument("n_cov must be positive");
    if (task == TaskKind::semseg && n_cov > 3) throw std::invalid_argument("semseg synthesis provides at most 3 channels");
    if (task == TaskKind::boundary && n_cov > 4) throw std::invalid_argument("boundary synthesis provides at most 4 channels");
    if (!(noise_sd >= 0)) throw std::invalid_argument("noise_sd must be non-negative");
    if (period < 4) throw std::invalid_argument("period must be at least 4 points");
    if (period_jitter < 0 || 2 * period_jitter >= period) throw std::invalid_argument("period_jitter must lie in [0, period/2)");
    if (phase_offset < 0 || phase_offset >= T) throw std::invalid_argument("phase_offset must lie in [0, T)");
    if (!(inspiration_fraction > 0 && inspiration_fraction < 1)) throw std::invalid_argument("inspiration_fraction must lie in (0, 1)");
    if (anomalies_per_record < 0) throw std::invalid_argument("anomalies_per_record must be non-negative");
    if (n_clean > n_records) throw std::invalid_argument("n_clean exceeds n_records");
    if (dropout_len < 1) throw std::invalid_argument("dropout_len must be positive");
  }

  Index resolved_clean() const {
    return n_clean >= 0 ? n_clean : static_cast<Index>(std::llround(0.8 * static_cast<double>(n_records)));
  }
};

namespace detail {

inline std::string numbered(const std::string& prefix, Index i) {
  std::ostringstream os;
  os << prefix << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

/// Period starts covering [0, T): the first at `offset`, then jittered periods.
inline std::vector<Index> period_starts(Index T, Index period, Index jitter, Index offset, std::mt19937_64& rng,
                                        std::vector<Index>* lengths) {
  std::uniform_int_distribution<Index> d(period - jitter, period + jitter);
  std::vector<Index> starts;
  // Periods preceding the offset so every point has a phase.
  std::vector<Index> pre_starts, pre_lengths;
  for (Index s = offset; s > 0 || pre_starts.empty();) {
    const Index len = d(rng);
    s -= len;
    pre_starts.push_back(s);
    pre_lengths.push_back(len);
  }
  starts.assign(pre_starts.rbegin(), pre_starts.rend());
  lengths->assign(pre_lengths.rbegin(), pre_lengths.rend());
  for (Index s = offset; s < T;) {
    const Index len = d(rng);
    starts.push_back(s);
    lengths->push_back(len);
    s += len;
  }
  return starts;
}

inline void add_noise(Matrix& m, double sd, std::mt19937_64& rng) {
  if (sd <= 0) return;
  std::normal_distribution<double> n(0.0, sd);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] += n(rng);
}

inline void attach_context(Record& r, Index i, double period_s, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> age(20, 85);
  r.patient = {{"age", age(rng)}, {"sex", rng() % 2 ? "F" : "M"}};
  const double rate = 60.0 / period_s;
  const double dur = static_cast<double>(r.series->length()) / r.series->fs();
  const auto n = std::max<Index>(2, static_cast<Index>(std::ceil(dur * 0.5)));
  std::vector<double> hr(static_cast<std::size_t>(n));
  const double drift = (i % 3 == 0 ? 1.0 : i % 3 == 1 ? -1.0 : 0.0) * 0.05;
  for (Index k = 0; k < n; ++k) hr[static_cast<std::size_t>(k)] = rate + drift * static_cast<double>(k);
  r.low_freq.push_back(LowFreqSignal{"rate", 0.5, std::move(hr)});
}

inline Record synth_semseg(const SynthConfig& cfg, Index i, std::mt19937_64& rng) {
  std::vector<Index> lengths;
  const auto starts = period_starts(cfg.T, cfg.period, cfg.period_jitter, 0, rng, &lengths);
  std::uniform_real_distribution<double> u(0.8, 1.2);
  const double flow_peak = u(rng), pip = 15.0 + 5.0 * u(rng), peep = 5.0, vt = 0.5 * u(rng);
  Matrix v(cfg.T, 3);
  std::vector<int> labels(static_cast<std::size_t>(cfg.T));
  for (std::size_t b = 0; b < starts.size(); ++b) {
    const Index P = lengths[b];
    const Index Li = std::max<Index>(1, std::llround(cfg.inspiration_fraction * static_cast<double>(P)));
    const double tau = 0.2 * static_cast<double>(P);
    const double p_end = peep + (pip - peep) * (1.0 - std::exp(-static_cast<double>(Li) / (0.1 * P)));
    for (Index k = 0; k < P; ++k) {
      const Index t = starts[b] + k;
      if (t < 0 || t >= cfg.T) continue;
      const double kk = static_cast<double>(k);
      double flow, pressure, volume;
      if (k < Li) {
        flow = flow_peak * (1.0 - 0.3 * kk / static_cast<double>(Li));
        pressure = peep + (pip - peep) * (1.0 - std::exp(-kk / (0.1 * P)));
        volume = vt * kk / static_cast<double>(Li);
        labels[static_cast<std::size_t>(t)] = 0;
      } else {
        const double e = kk - static_cast<double>(Li);
        flow = -flow_peak * std::exp(-e / tau);
        pressure = peep + (p_end - peep) * std::exp(-e / (0.05 * P));
        volume = vt * std::exp(-e / tau);
        labels[static_cast<std::size_t>(t)] = 1;
      }
      v(t, 0) = flow;
      v(t, 1) = pressure;
      v(t, 2) = volume;
    }
  }
  Matrix out = v.leftCols(cfg.n_cov);
  add_noise(out, cfg.noise_sd, rng);
  static const std::vector<std::string> names{"flow", "pressure", "volume"};
  Record r;
  r.id = numbered("semseg_", i);
  r.series = std::make_shared<MultivariateSeries>(std::move(out), cfg.fs,
                                                  std::vector<std::string>(names.begin(), names.begin() + cfg.n_cov),
                                                  numbered("p", i));
  r.annotations = AnnotationSet::from_labels(std::move(labels));
  attach_context(r, i, static_cast<double>(cfg.period) / cfg.fs, rng);
  return r;
}

inline Record synth_boundary(const SynthConfig& cfg, Index i, std::mt19937_64& rng) {
  std::vector<Index> lengths;
  const auto starts = period_starts(cfg.T, cfg.period, cfg.period_jitter, cfg.phase_offset, rng, &lengths);
  Matrix v(cfg.T, cfg.n_cov);
  std::vector<Index> points;
  for (std::size_t b = 0; b < starts.size(); ++b) {
    if (starts[b] >= 0 && starts[b] < cfg.T) points.push_back(starts[b]);
    for (Index k = 0; k < lengths[b]; ++k) {
      const Index t = starts[b] + k;
      if (t < 0 || t >= cfg.T) continue;
      const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(lengths[b]);
      v(t, 0) = 0.5 + 0.5 * std::cos(phi);
      for (Index c = 1; c < cfg.n_cov; ++c) v(t, c) = std::sin(phi + static_cast<double>(c) * std::numbers::pi / 3.0);
    }
  }
  add_noise(v, cfg.noise_sd, rng);
  static const std::vector<std::string> names{"resp", "pleth", "abp", "ecg"};
  Record r;
  r.id = numbered("boundary_", i);
  r.series = std::make_shared<MultivariateSeries>(std::move(v), cfg.fs,
                                                  std::vector<std::string>(names.begin(), names.begin() + cfg.n_cov),
                                                  numbered("p", i));
  r.annotations = AnnotationSet::from_points(AnnotationKind::boundary_points, std::move(points));
  attach_context(r, i, static_cast<double>(cfg.period) / cfg.fs, rng);
  return r;
}

inline Record synth_anomaly(const SynthConfig& cfg, Index i, bool clean, std::mt19937_64& rng) {
  std::vector<Index> lengths;
  const auto starts = period_starts(cfg.T, cfg.period, cfg.period_jitter, 0, rng, &lengths);
  Matrix v(cfg.T, cfg.n_cov);
  for (std::size_t b = 0; b < starts.size(); ++b) {
    for (Index k = 0; k < lengths[b]; ++k) {
      const Index t = starts[b] + k;
      if (t < 0 || t >= cfg.T) continue;
      const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(lengths[b]);
      for (Index c = 0; c < cfg.n_cov; ++c) {
        const double shift = static_cast<double>(c) * 0.9;
        v(t, c) = 2.0 + std::sin(phi + shift) + 0.5 * std::sin(2.0 * phi + 2.0 * shift);
      }
    }
  }
  add_noise(v, cfg.noise_sd, rng);
  std::set<Index> gt;
  if (!clean && cfg.anomalies_per_record > 0) {
    // Events live in disjoint slots so they never overlap.
    const Index slot = cfg.T / cfg.anomalies_per_record;
    if (slot < cfg.dropout_len + 4) throw std::invalid_argument("too many anomalies for the series length");
    std::uniform_int_distribution<Index> ch(0, cfg.n_cov - 1);
    for (Index a = 0; a < cfg.anomalies_per_record; ++a) {
      std::uniform_int_distribution<Index> pos(a * slot + 2, a * slot + slot - cfg.dropout_len - 2);
      const Index p = pos(rng);
      if (a % 2 == 0) {
        const Index c = ch(rng);
        v(p, c) += (rng() % 2 ? 1.0 : -1.0) * cfg.spike_amplitude;
        gt.insert(p);
      } else {
        for (Index t = p; t < p + cfg.dropout_len; ++t) {
          v.row(t).setZero();
          gt.insert(t);
        }
      }
    }
  }
  Record r;
  r.id = numbered("anomaly_", i);
  std::vector<std::string> names;
  for (Index c = 0; c < cfg.n_cov; ++c) names.push_back("lead" + std::to_string(c));
  r.series = std::make_shared<MultivariateSeries>(std::move(v), cfg.fs, std::move(names), numbered("p", i));
  r.annotations = AnnotationSet::from_points(AnnotationKind::anomaly_points, std::vector<Index>(gt.begin(), gt.end()));
  attach_context(r, i, static_cast<double>(cfg.period) / cfg.fs, rng);
  return r;
}

}  // namespace detail

inline std::vector<Record> synth_dataset(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Record> out;
  const Index clean = cfg.resolved_clean();
  for (Index i = 0; i < cfg.n_records; ++i) {
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(i) + 1);
    switch (cfg.task) {
      case TaskKind::semseg: out.push_back(detail::synth_semseg(cfg, i, rng)); break;
      case TaskKind::boundary: out.push_back(detail::synth_boundary(cfg, i, rng)); break;
      case TaskKind::anomaly: out.push_back(detail::synth_anomaly(cfg, i, i < clean, rng)); break;
    }
    out.back().annotations.validate(cfg.T);
  }
  return out;
}

}  // namespace medts::ingest
