#pragma once

#include <stdexcept>
#include <string>

namespace medts {

enum class TaskKind { semseg, boundary, anomaly };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::semseg: return "semseg";
    case TaskKind::boundary: return "boundary";
    case TaskKind::anomaly: return "anomaly";
  }
  return "?";
}

inline TaskKind parse_task(const std::string& s) {
  if (s == "semseg") return TaskKind::semseg;
  if (s == "boundary") return TaskKind::boundary;
  if (s == "anomaly") return TaskKind::anomaly;
  throw std::invalid_argument("unknown task: " + s);
}

}  // namespace medts
