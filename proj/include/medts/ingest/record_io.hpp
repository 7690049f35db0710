#pragma once

// On-disk record formats.
//
// CSV record `<stem>.csv`:
//   fs=<Hz>,features=<name1;name2;...>
//   v11,v12,...          one row per time point
// Annotation sidecar `<stem>.ann`:
//   kind=<point_labels|boundary_points|anomaly_points>
//   then one integer per line (points, or one label per time point), or
//   `index,label` pairs giving the label from index up to the next pair.
// Patient sidecar `<stem>.json` (optional):
//   {"patient": {...flat...}, "low_freq": [{"name": ..., "fs": ..., "values": [...]}]}
//
// The "wfdb_like" reader accepts PhysioNet text exports: a samples table as
// written by `rdsamp -c -v` (quoted header, optional units line, first column
// sample number or elapsed seconds) plus an `rdann` listing.

#include "medts/ingest/record.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace medts::ingest {

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(context + ": cannot parse number '" + s + "'");
  }
}

inline Index parse_index(const std::string& s, const std::string& context) {
  Index v = 0;
  const auto* b = s.data();
  const auto* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw std::runtime_error(context + ": cannot parse integer '" + s + "'");
  return v;
}

inline std::string unquote(std::string s) {
  s = trim(s);
  if (s.size() >= 2 && (s.front() == '\'' || s.front() == '"') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
  return s;
}

}  // namespace detail

inline std::filesystem::path stem_path(const std::filesystem::path& p) {
  auto s = p;
  if (s.extension() == ".csv") s.replace_extension();
  return s;
}

inline MultivariateSeries read_csv_series(const std::filesystem::path& path, const std::string& patient_id = {}) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string header;
  std::getline(f, header);
  header = detail::trim(header);
  double fs = 0;
  std::vector<std::string> names;
  bool have_fs = false, have_features = false;
  for (const auto& field : detail::split(header, ',')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw std::runtime_error(path.string() + ": malformed header");
    const auto key = field.substr(0, eq), val = field.substr(eq + 1);
    if (key == "fs") {
      fs = detail::parse_double(val, path.string() + " header");
      have_fs = true;
    } else if (key == "features") {
      names = detail::split(val, ';');
      have_features = true;
    } else {
      throw std::runtime_error(path.string() + ": malformed header, unknown key '" + key + "'");
    }
  }
  if (!have_fs || !have_features || names.empty()) throw std::runtime_error(path.string() + ": malformed header");
  std::vector<double> data;
  std::string line;
  Index rows = 0, lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != names.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(names.size()) + " columns");
    }
    for (const auto& c : cells) data.push_back(detail::parse_double(c, path.string() + ":" + std::to_string(lineno)));
    ++rows;
  }
  if (rows == 0) throw std::runtime_error(path.string() + ": no samples");
  Matrix values = Eigen::Map<Matrix>(data.data(), rows, static_cast<Index>(names.size()));
  return MultivariateSeries(std::move(values), fs, std::move(names), patient_id);
}

inline void write_csv_series(const std::filesystem::path& path, const MultivariateSeries& s) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  std::ostringstream fs;
  fs << std::setprecision(12) << s.fs();
  f << "fs=" << fs.str() << ",features=";
  for (std::size_t i = 0; i < s.feature_names().size(); ++i) f << (i ? ";" : "") << s.feature_names()[i];
  f << '\n' << std::setprecision(10);
  for (Index t = 0; t < s.length(); ++t) {
    for (Index c = 0; c < s.channels(); ++c) f << (c ? "," : "") << s.values()(t, c);
    f << '\n';
  }
}

inline AnnotationSet read_annotations(const std::filesystem::path& path, Index T) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string header;
  std::getline(f, header);
  header = detail::trim(header);
  if (header.rfind("kind=", 0) != 0) throw std::runtime_error(path.string() + ": malformed header");
  AnnotationSet a;
  a.kind = parse_annotation_kind(header.substr(5));
  std::vector<std::pair<Index, int>> pairs;
  std::vector<Index> singles;
  std::string line;
  Index lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string ctx = path.string() + ":" + std::to_string(lineno);
    const auto comma = line.find(',');
    if (comma != std::string::npos) {
      pairs.emplace_back(detail::parse_index(detail::trim(line.substr(0, comma)), ctx),
                         static_cast<int>(detail::parse_index(detail::trim(line.substr(comma + 1)), ctx)));
    } else {
      singles.push_back(detail::parse_index(line, ctx));
    }
  }
  if (!pairs.empty() && !singles.empty()) throw std::runtime_error(path.string() + ": mixed annotation line formats");
  if (a.kind == AnnotationKind::point_labels) {
    if (!pairs.empty()) {
      if (pairs.front().first != 0) throw std::runtime_error(path.string() + ": label runs must start at index 0");
      a.labels.assign(static_cast<std::size_t>(T), 0);
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Index begin = pairs[i].first;
        const Index end = i + 1 < pairs.size() ? pairs[i + 1].first : T;
        if (begin >= T) throw std::out_of_range("annotation out of range");
        if (end <= begin) throw std::invalid_argument("non-monotonic annotations");
        std::fill(a.labels.begin() + begin, a.labels.begin() + end, pairs[i].second);
      }
    } else {
      for (Index v : singles) a.labels.push_back(static_cast<int>(v));
    }
  } else {
    if (!pairs.empty()) {
      for (const auto& [idx, _] : pairs) a.points.push_back(idx);
    } else {
      a.points = std::move(singles);
    }
  }
  a.validate(T);
  return a;
}

inline void write_annotations(const std::filesystem::path& path, const AnnotationSet& a) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "kind=" << to_string(a.kind) << '\n';
  if (a.kind == AnnotationKind::point_labels) {
    for (const auto& seg : assemble_segments(a.labels)) f << seg.start << ',' << *seg.label << '\n';
  } else {
    for (Index p : a.points) f << p << '\n';
  }
}

inline void read_patient_sidecar(const std::filesystem::path& path, Record& r) {
  std::ifstream f(path);
  if (!f) return;
  const auto j = nlohmann::json::parse(f);
  if (j.contains("patient")) r.patient = j.at("patient");
  if (j.contains("low_freq")) {
    for (const auto& s : j.at("low_freq")) {
      r.low_freq.push_back(LowFreqSignal{s.at("name"), s.at("fs"), s.at("values").get<std::vector<double>>()});
    }
  }
}

inline void write_patient_sidecar(const std::filesystem::path& path, const Record& r) {
  nlohmann::json j;
  j["patient"] = r.patient;
  j["low_freq"] = nlohmann::json::array();
  for (const auto& s : r.low_freq) j["low_freq"].push_back({{"name", s.name}, {"fs", s.fs}, {"values", s.values}});
  std::ofstream(path) << j.dump(1) << '\n';
}

enum class RecordFormat { csv, wfdb_like };

/// Parsed PhysioNet text export (see header comment).
struct WfdbText {
  std::vector<std::string> channel_names;
  Matrix values;
  double fs = 0;
};

inline WfdbText read_wfdb_samples(const std::filesystem::path& path, std::optional<double> fs_hint = {}) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  const char sep = line.find('\t') != std::string::npos && line.find(',') == std::string::npos ? '\t' : ',';
  auto header = detail::split(line, sep);
  if (header.size() < 2) throw std::runtime_error(path.string() + ": malformed header");
  for (auto& h : header) h = detail::unquote(h);
  const std::string first = header.front();
  const bool elapsed = first.find("time") != std::string::npos || first.find("Time") != std::string::npos;
  WfdbText out;
  out.channel_names.assign(header.begin() + 1, header.end());
  std::vector<double> data, stamps;
  Index rows = 0, lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    auto cells = detail::split(line, sep);
    for (auto& c : cells) c = detail::unquote(c);
    if (cells.size() != header.size()) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": column count");
    try {
      (void)std::stod(cells.front());
    } catch (const std::exception&) {
      if (rows == 0) continue;  // units line
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    const std::string ctx = path.string() + ":" + std::to_string(lineno);
    stamps.push_back(detail::parse_double(cells.front(), ctx));
    for (std::size_t c = 1; c < cells.size(); ++c) data.push_back(detail::parse_double(cells[c], ctx));
    ++rows;
  }
  if (rows < 2) throw std::runtime_error(path.string() + ": too few samples");
  out.values = Eigen::Map<Matrix>(data.data(), rows, static_cast<Index>(out.channel_names.size()));
  if (fs_hint) {
    out.fs = *fs_hint;
  } else if (elapsed) {
    out.fs = static_cast<double>(rows - 1) / (stamps.back() - stamps.front());
  } else {
    throw std::runtime_error(path.string() + ": sampling rate required for sample-numbered exports");
  }
  return out;
}

/// One row of an `rdann` listing.
struct WfdbAnnotation {
  Index sample = 0;
  std::string symbol;
};

inline std::vector<WfdbAnnotation> read_wfdb_annotations(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<WfdbAnnotation> out;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream is(line);
    std::string time, sample, symbol;
    if (!(is >> time >> sample >> symbol)) continue;
    Index s = 0;
    auto [p, ec] = std::from_chars(sample.data(), sample.data() + sample.size(), s);
    if (ec != std::errc() || p != sample.data() + sample.size()) continue;  // header line
    out.push_back(WfdbAnnotation{s, symbol});
  }
  return out;
}

inline const std::set<std::string>& beat_symbols() {
  static const std::set<std::string> s{"N", "L", "R", "B", "A", "a", "J", "S", "V", "r",
                                       "F", "e", "j", "n", "E", "/", "f", "Q", "?"};
  return s;
}

/// Class ids for wave-delineation exports: 0 = P, 1 = QRS, 2 = T, 3 = unlabeled.
inline std::vector<int> delineation_labels(const std::vector<WfdbAnnotation>& anns, Index T) {
  std::vector<int> labels(static_cast<std::size_t>(T), 3);
  for (std::size_t i = 0; i + 2 < anns.size(); ++i) {
    if (anns[i].symbol != "(" || anns[i + 2].symbol != ")") continue;
    const std::string& peak = anns[i + 1].symbol;
    const int cls = peak == "p" ? 0 : peak == "N" ? 1 : peak == "t" ? 2 : -1;
    if (cls < 0) continue;
    const Index lo = std::max<Index>(0, anns[i].sample), hi = std::min<Index>(T - 1, anns[i + 2].sample);
    for (Index t = lo; t <= hi; ++t) labels[static_cast<std::size_t>(t)] = cls;
  }
  return labels;
}

/// Converts an rdann listing to one of the annotation kinds.
inline AnnotationSet annotations_from_wfdb(const std::vector<WfdbAnnotation>& anns, AnnotationKind kind, Index T,
                                           double scale = 1.0, bool all_symbols = false) {
  std::vector<WfdbAnnotation> scaled = anns;
  for (auto& a : scaled) a.sample = std::llround(static_cast<double>(a.sample) * scale);
  if (kind == AnnotationKind::point_labels) return AnnotationSet::from_labels(delineation_labels(scaled, T));
  std::set<Index> pts;
  for (const auto& a : scaled) {
    if (a.sample < 0 || a.sample >= T) continue;
    const bool beat = beat_symbols().count(a.symbol) != 0;
    if (kind == AnnotationKind::boundary_points && (all_symbols || beat)) pts.insert(a.sample);
    if (kind == AnnotationKind::anomaly_points && beat && a.symbol != "N") pts.insert(a.sample);
  }
  return AnnotationSet::from_points(kind, std::vector<Index>(pts.begin(), pts.end()));
}

/// Loads `<stem>.csv` with sidecars, or a wfdb_like export `<stem>.csv` + `<stem>.txt` annotations.
inline Record load_record(const std::filesystem::path& path, RecordFormat format = RecordFormat::csv,
                          AnnotationKind wfdb_kind = AnnotationKind::boundary_points,
                          std::optional<double> fs_hint = {}) {
  const auto stem = stem_path(path);
  Record r;
  r.id = stem.filename().string();
  if (format == RecordFormat::csv) {
    r.series = std::make_shared<MultivariateSeries>(read_csv_series(stem.string() + ".csv", r.id));
    const std::filesystem::path ann = stem.string() + ".ann";
    if (std::filesystem::exists(ann)) r.annotations = read_annotations(ann, r.series->length());
    else r.annotations = AnnotationSet::from_points(AnnotationKind::anomaly_points, {});
    read_patient_sidecar(stem.string() + ".json", r);
  } else {
    auto w = read_wfdb_samples(path, fs_hint);
    r.series = std::make_shared<MultivariateSeries>(std::move(w.values), w.fs, w.channel_names, r.id);
    const std::filesystem::path ann = stem.string() + ".txt";
    if (std::filesystem::exists(ann)) {
      r.annotations = annotations_from_wfdb(read_wfdb_annotations(ann), wfdb_kind, r.series->length());
    }
    r.annotations.validate(r.series->length());
  }
  return r;
}

inline void save_record(const std::filesystem::path& stem, const Record& r) {
  if (!stem.parent_path().empty()) std::filesystem::create_directories(stem.parent_path());
  write_csv_series(stem.string() + ".csv", *r.series);
  write_annotations(stem.string() + ".ann", r.annotations);
  write_patient_sidecar(stem.string() + ".json", r);
}

/// All `*.csv` records in a directory, sorted by id.
inline std::vector<Record> load_directory(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Record> out;
  for (const auto& p : files) {
    try {
      out.push_back(load_record(p));
    } catch (const std::exception& e) {
      throw std::runtime_error("record " + p.filename().string() + ": " + e.what());
    }
  }
  if (out.empty()) throw std::runtime_error("no records found in " + dir.string());
  return out;
}

}  // namespace medts::ingest
