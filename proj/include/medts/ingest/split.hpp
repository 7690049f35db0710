#pragma once

#include "medts/ingest/record.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace medts::ingest {

enum class SplitStrategy { random_by_patient, anomaly_sorted };

inline std::string to_string(SplitStrategy s) {
  return s == SplitStrategy::random_by_patient ? "random_by_patient" : "anomaly_sorted";
}

inline SplitStrategy parse_split_strategy(const std::string& s) {
  if (s == "random_by_patient") return SplitStrategy::random_by_patient;
  if (s == "anomaly_sorted") return SplitStrategy::anomaly_sorted;
  throw std::invalid_argument("unknown split strategy: " + s);
}

struct SplitItem {
  std::string id;
  std::string patient;  // records sharing a patient stay on the same side
  Index anomaly_count = 0;
};

struct DatasetSplit {
  std::vector<std::string> train_records;
  std::vector<std::string> test_records;
  SplitStrategy strategy = SplitStrategy::random_by_patient;
};

inline std::vector<SplitItem> split_items(const std::vector<Record>& records) {
  std::vector<SplitItem> out;
  for (const auto& r : records) {
    const std::string patient = r.series && !r.series->patient_id().empty() ? r.series->patient_id() : r.id;
    out.push_back(SplitItem{r.id, patient, r.anomaly_count()});
  }
  return out;
}

/// Cuts at round(train_fraction * n_groups), clamped so both sides are non-empty.
inline DatasetSplit make_split(const std::vector<SplitItem>& items, SplitStrategy strategy, double train_fraction,
                               std::uint64_t seed = 0) {
  if (!(train_fraction > 0 && train_fraction < 1)) throw std::invalid_argument("train fraction must lie in (0, 1)");
  // Group by patient, preserving first-appearance order.
  std::vector<std::string> patients;
  std::map<std::string, std::vector<const SplitItem*>> groups;
  for (const auto& it : items) {
    auto [pos, fresh] = groups.try_emplace(it.patient);
    if (fresh) patients.push_back(it.patient);
    pos->second.push_back(&it);
  }
  const auto n = static_cast<Index>(patients.size());
  if (n < 2) throw std::invalid_argument("need at least two patients to form a non-empty test split");

  if (strategy == SplitStrategy::random_by_patient) {
    std::mt19937_64 rng(seed);
    for (Index i = n - 1; i > 0; --i) {
      const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(patients[static_cast<std::size_t>(i)], patients[static_cast<std::size_t>(j)]);
    }
  } else {
    auto count = [&](const std::string& p) {
      Index c = 0;
      for (const auto* it : groups.at(p)) c += it->anomaly_count;
      return c;
    };
    std::stable_sort(patients.begin(), patients.end(),
                     [&](const std::string& a, const std::string& b) { return count(a) < count(b); });
  }
  const Index n_train = std::clamp<Index>(std::llround(train_fraction * static_cast<double>(n)), 1, n - 1);
  DatasetSplit out;
  out.strategy = strategy;
  for (Index i = 0; i < n; ++i) {
    auto& side = i < n_train ? out.train_records : out.test_records;
    for (const auto* it : groups.at(patients[static_cast<std::size_t>(i)])) side.push_back(it->id);
  }
  return out;
}

inline DatasetSplit make_split(const std::vector<Record>& records, SplitStrategy strategy, double train_fraction,
                               std::uint64_t seed = 0) {
  return make_split(split_items(records), strategy, train_fraction, seed);
}

}  // namespace medts::ingest
