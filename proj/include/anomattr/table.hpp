#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "anomattr/datetime.hpp"
#include "anomattr/error.hpp"
#include "anomattr/util.hpp"

#include "json.hpp"

namespace anomattr {

// Timestamp-indexed M x F feature matrix. Values are row-major.
struct TimeTable {
  std::vector<std::int64_t> timestamps;
  std::optional<std::string> grid_id;
  std::vector<std::string> feature_names;
  std::vector<std::string> units;  // optional metadata, parallel to feature_names
  std::vector<double> values;

  std::size_t rows() const { return timestamps.size(); }
  std::size_t features() const { return feature_names.size(); }

  double at(std::size_t r, std::size_t f) const { return values[r * features() + f]; }
  double& at(std::size_t r, std::size_t f) { return values[r * features() + f]; }

  std::vector<double> column(std::size_t f) const {
    std::vector<double> c(rows());
    for (std::size_t r = 0; r < rows(); ++r) c[r] = at(r, f);
    return c;
  }

  std::size_t feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < feature_names.size(); ++i)
      if (feature_names[i] == name) return i;
    fail(ErrorKind::MissingColumn, "feature '" + name + "' not present");
  }

  bool has_feature(const std::string& name) const {
    return std::find(feature_names.begin(), feature_names.end(), name) != feature_names.end();
  }
};

// Per-feature normalization statistics (population standard deviation).
struct NormStats {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<bool> degenerate;  // true where stddev was 0 at fit time

  bool empty() const { return names.empty(); }
};

// M' x T x F rolling-window view of a TimeTable.
struct WindowSet {
  std::vector<std::string> feature_names;
  int T = 0;
  int stride = 1;
  std::vector<std::size_t> origin_index;       // window -> source row of its last timestep
  std::vector<std::int64_t> origin_timestamps;
  std::vector<double> data;                    // (w, t, f) row-major

  std::size_t count() const { return origin_index.size(); }
  std::size_t features() const { return feature_names.size(); }

  double at(std::size_t w, std::size_t t, std::size_t f) const {
    return data[(w * T + t) * features() + f];
  }
};

namespace detail {

struct RawCsv {
  bool has_grid = false;
  std::vector<std::string> features;       // file order
  std::vector<std::string> grid;           // per row; empty strings when !has_grid
  std::vector<std::int64_t> ts;
  std::vector<std::vector<double>> rows;   // file feature order
};

inline RawCsv read_csv(const std::string& path, const std::vector<std::string>& schema) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::IoFailure, "empty file '" + path + "'");
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "timestamp") {
    fail(ErrorKind::MissingColumn, "first column must be 'timestamp' in '" + path + "'");
  }

  RawCsv raw;
  std::size_t first_feature = 1;
  if (header.size() > 1 && header[1] == "grid_id") {
    raw.has_grid = true;
    first_feature = 2;
  }
  raw.features.assign(header.begin() + first_feature, header.end());

  if (!schema.empty()) {
    for (const auto& want : schema) {
      if (std::find(raw.features.begin(), raw.features.end(), want) == raw.features.end()) {
        fail(ErrorKind::MissingColumn, "schema feature '" + want + "' missing from '" + path + "'");
      }
    }
    for (const auto& have : raw.features) {
      if (std::find(schema.begin(), schema.end(), have) == schema.end()) {
        fail(ErrorKind::UnexpectedColumn, "column '" + have + "' not in schema for '" + path + "'");
      }
    }
  }

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      fail(ErrorKind::IoFailure, path + ":" + std::to_string(lineno) + ": expected " +
                                     std::to_string(header.size()) + " fields, got " +
                                     std::to_string(fields.size()));
    }
    raw.ts.push_back(parse_iso8601(fields[0]));
    raw.grid.push_back(raw.has_grid ? fields[1] : std::string());
    std::vector<double> vals(raw.features.size());
    for (std::size_t f = 0; f < raw.features.size(); ++f) {
      vals[f] = parse_double(fields[first_feature + f], path + ":" + std::to_string(lineno));
    }
    raw.rows.push_back(std::move(vals));
  }
  return raw;
}

inline TimeTable assemble(const RawCsv& raw, const std::vector<std::string>& schema,
                          const std::vector<std::size_t>& row_ids, const std::string& grid) {
  // features come out in schema order when a schema is given, file order otherwise
  const std::vector<std::string>& names = schema.empty() ? raw.features : schema;
  std::vector<std::size_t> col_of(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    col_of[i] = static_cast<std::size_t>(
        std::find(raw.features.begin(), raw.features.end(), names[i]) - raw.features.begin());
  }

  std::vector<std::size_t> order = row_ids;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return raw.ts[a] < raw.ts[b]; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (raw.ts[order[i]] == raw.ts[order[i - 1]]) {
      fail(ErrorKind::DuplicateTimestamp,
           "duplicate timestamp " + format_iso8601(raw.ts[order[i]]) +
               (grid.empty() ? "" : " in grid '" + grid + "'"));
    }
  }

  TimeTable t;
  if (!grid.empty()) t.grid_id = grid;
  t.feature_names = names;
  t.units.assign(names.size(), "");
  t.timestamps.reserve(order.size());
  t.values.reserve(order.size() * names.size());
  for (std::size_t id : order) {
    t.timestamps.push_back(raw.ts[id]);
    for (std::size_t f = 0; f < names.size(); ++f) t.values.push_back(raw.rows[id][col_of[f]]);
  }
  return t;
}

}  // namespace detail

// Loads a CSV with header `timestamp[,grid_id],f1,...,fF`. An empty schema
// accepts the file's feature columns as-is; otherwise the schema must match
// exactly (missing or extra columns are errors) and fixes the column order.
// Files holding more than one grid must go through load_tables.
inline TimeTable load_table(const std::string& path, const std::vector<std::string>& schema = {}) {
  auto raw = detail::read_csv(path, schema);
  std::set<std::string> grids(raw.grid.begin(), raw.grid.end());
  if (grids.size() > 1) {
    fail(ErrorKind::MultipleGrids,
         "'" + path + "' holds " + std::to_string(grids.size()) + " grids; use load_tables");
  }
  std::vector<std::size_t> ids(raw.ts.size());
  std::iota(ids.begin(), ids.end(), 0);
  return detail::assemble(raw, schema, ids, raw.grid.empty() ? "" : raw.grid.front());
}

// Splits a multi-grid CSV into one TimeTable per grid_id, ordered by grid id.
inline std::vector<TimeTable> load_tables(const std::string& path,
                                          const std::vector<std::string>& schema = {}) {
  auto raw = detail::read_csv(path, schema);
  std::map<std::string, std::vector<std::size_t>> by_grid;
  for (std::size_t i = 0; i < raw.ts.size(); ++i) by_grid[raw.grid[i]].push_back(i);
  std::vector<TimeTable> out;
  out.reserve(by_grid.size());
  for (const auto& [grid, ids] : by_grid) out.push_back(detail::assemble(raw, schema, ids, grid));
  return out;
}

inline void save_table(const TimeTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << "timestamp";
  if (t.grid_id) out << ",grid_id";
  for (const auto& n : t.feature_names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < t.rows(); ++r) {
    out << format_iso8601(t.timestamps[r]);
    if (t.grid_id) out << ',' << *t.grid_id;
    for (std::size_t f = 0; f < t.features(); ++f) out << ',' << format_double(t.at(r, f));
    out << '\n';
  }
}

inline nlohmann::ordered_json norm_stats_to_json(const NormStats& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < s.names.size(); ++i) {
    j[s.names[i]] = {{"mean", s.mean[i]},
                     {"std", s.stddev[i]},
                     {"degenerate", static_cast<bool>(s.degenerate[i])}};
  }
  return j;
}

inline NormStats norm_stats_from_json(const nlohmann::ordered_json& j) {
  NormStats s;
  for (const auto& [name, entry] : j.items()) {
    s.names.push_back(name);
    s.mean.push_back(entry.at("mean").get<double>());
    s.stddev.push_back(entry.at("std").get<double>());
    s.degenerate.push_back(entry.at("degenerate").get<bool>());
  }
  return s;
}

// `timestamp,label` CSV with 0/1 labels, sorted by timestamp on load.
inline std::vector<std::pair<std::int64_t, bool>> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::IoFailure, "empty file '" + path + "'");
  std::vector<std::pair<std::int64_t, bool>> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 2) {
      fail(ErrorKind::IoFailure, path + ":" + std::to_string(lineno) + ": expected 2 fields");
    }
    out.emplace_back(parse_iso8601(fields[0]),
                     parse_double(fields[1], path + ":" + std::to_string(lineno)) != 0.0);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace anomattr
