#pragma once

#include "medts/core/series.hpp"
#include "medts/core/task_kind.hpp"

#include <cstdint>
#include <vector>

namespace medts::tasks {

/// Post-processed output for one record; only the fields of `task` are populated.
struct TaskPrediction {
  TaskKind task = TaskKind::semseg;
  Matrix raw;  // N_t x K, empty for baselines without raw outputs
  std::vector<int> labels;
  std::vector<Index> boundary_points;
  std::vector<double> scores;
  std::vector<std::uint8_t> anomaly_mask;
};

}  // namespace medts::tasks
