#pragma once

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "anomattr/clv.hpp"
#include "anomattr/threshold.hpp"

namespace anomattr {

// How a feature qualifies for the exceedance set F_t:
//   CounterfactualExceedsBaseline: counterfactual score beats the baseline
//     score (delta > 0 after the direction transform);
//   DeltaExceedsBaseline: the delta itself beats the baseline score (the
//     literal reading of the published procedure; it compares a difference
//     against a raw score and is kept selectable for reproduction).
enum class MembershipRule { CounterfactualExceedsBaseline, DeltaExceedsBaseline };

// Orientation of "influence". Replacing the culprit of an anomaly with its
// median typically lowers the score, so Negative (or Absolute) is what
// recovers planted culprits; Positive is the literal published rule.
enum class Direction { Positive, Negative, Absolute };

struct AttributionOptions {
  MembershipRule rule = MembershipRule::CounterfactualExceedsBaseline;
  Direction direction = Direction::Positive;
  bool everywhere = false;  // compute deltas at all timestamps, not just flagged ones
  int jobs = 1;
};

// Per-timestamp delta matrix, exceedance sets and winners.
struct AttributionSeries {
  std::vector<std::int64_t> timestamps;
  std::vector<std::string> feature_names;
  std::vector<double> delta;                     // (t, f) row-major
  std::vector<std::vector<int>> exceedance_sets; // per t, qualifying feature indices
  std::vector<std::optional<int>> winners;       // per t, index into feature_names
  std::size_t scoring_passes = 0;                // counterfactual passes made (== F)

  std::size_t size() const { return timestamps.size(); }
  double delta_at(std::size_t t, std::size_t f) const { return delta[t * feature_names.size() + f]; }
};

struct RankedFeature {
  std::string name;
  double count = 0.0;
  double frequency = 0.0;  // count / n_grids
};

using RankedFeatures = std::vector<RankedFeature>;

// Replaces column `feature_index`, within each calendar year, by that year's
// median of the column. Everything else is bit-identical.
inline TimeTable counterfactual_table(const TimeTable& t, std::size_t feature_index) {
  require(feature_index < t.features(), ErrorKind::IndexOutOfRange,
          "feature index " + std::to_string(feature_index) + " out of range");
  TimeTable out = t;
  std::map<int, std::vector<std::size_t>> by_year;
  for (std::size_t r = 0; r < t.rows(); ++r) by_year[year_of(t.timestamps[r])].push_back(r);
  for (const auto& [year, rows] : by_year) {
    std::vector<double> vals(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) vals[i] = t.at(rows[i], feature_index);
    const double med = median(std::move(vals));
    for (std::size_t r : rows) out.at(r, feature_index) = med;
  }
  return out;
}

namespace detail {

inline double oriented(double delta, Direction d) {
  switch (d) {
    case Direction::Positive: return delta;
    case Direction::Negative: return -delta;
    case Direction::Absolute: return std::abs(delta);
  }
  return delta;
}

}  // namespace detail

// Algorithm: for each feature, rescore the median-replaced table and record
// the score change against the baseline; at each flagged timestamp collect
// the qualifying features F_t and pick the winner arg max (ties to the lowest
// feature index). Performs exactly F counterfactual scoring passes.
inline AttributionSeries attribute(const ModelCheckpoint& model, const TimeTable& table,
                                   const ScoreSeries& baseline, const ThresholdSeries& flags,
                                   const AttributionOptions& opt = {}) {
  require(table.feature_names == model.feature_names, ErrorKind::ModelDataMismatch,
          "table features do not match the checkpoint");
  const std::size_t F = table.features();
  const WindowSet ws = window(table, model.T, 1);
  require(baseline.size() == ws.count(), ErrorKind::ModelDataMismatch,
          "baseline was not produced from this table (length mismatch)");
  require(baseline.timestamps == ws.origin_timestamps, ErrorKind::ModelDataMismatch,
          "baseline timestamps do not match the table's windows");
  require(flags.size() == baseline.size(), ErrorKind::LengthMismatch,
          "flags and baseline have different lengths");
  require(flags.timestamps == baseline.timestamps, ErrorKind::LengthMismatch,
          "flags and baseline cover different timestamps");

  // which windows get scored
  std::vector<std::size_t> targets;
  for (std::size_t w = 0; w < ws.count(); ++w) {
    if (opt.everywhere || flags.flags[w]) targets.push_back(w);
  }

  AttributionSeries attr;
  attr.timestamps = baseline.timestamps;
  attr.feature_names = table.feature_names;
  attr.delta.assign(baseline.size() * F, 0.0);
  attr.exceedance_sets.resize(baseline.size());
  attr.winners.assign(baseline.size(), std::nullopt);
  attr.scoring_passes = F;

  const int jobs = std::max(1, opt.jobs);
  std::atomic<std::size_t> next_feature{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t f = next_feature.fetch_add(1);
      if (f >= F) return;
      const TimeTable modified = counterfactual_table(table, f);
      const WindowSet mws = window(modified, model.T, 1);
      const auto scores = score_windows(model, mws, targets);
      for (std::size_t i = 0; i < targets.size(); ++i) {
        attr.delta[targets[i] * F + f] = scores[i] - baseline.scores[targets[i]];
      }
    }
  };
  if (jobs == 1 || F <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < std::min<int>(jobs, static_cast<int>(F)); ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  for (std::size_t t = 0; t < baseline.size(); ++t) {
    if (!flags.flags[t]) continue;
    double best = 0.0;
    int best_f = -1;
    for (std::size_t f = 0; f < F; ++f) {
      const double g = detail::oriented(attr.delta_at(t, f), opt.direction);
      const bool qualifies = opt.rule == MembershipRule::CounterfactualExceedsBaseline
                                 ? g > 0.0
                                 : g > baseline.scores[t];
      if (!qualifies) continue;
      attr.exceedance_sets[t].push_back(static_cast<int>(f));
      if (best_f < 0 || g > best) {
        best = g;
        best_f = static_cast<int>(f);
      }
    }
    if (best_f >= 0) attr.winners[t] = best_f;
  }
  return attr;
}

// Builds a descending ranking from raw winner counts; frequency = count / n_grids.
inline RankedFeatures rank_from_counts(const std::map<std::string, double>& counts, int n_grids) {
  require(n_grids >= 1, ErrorKind::InvalidConfig, "n_grids must be at least 1");
  RankedFeatures out;
  for (const auto& [name, count] : counts) {
    out.push_back(RankedFeature{name, count, count / static_cast<double>(n_grids)});
  }
  std::sort(out.begin(), out.end(), [](const RankedFeature& a, const RankedFeature& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.name < b.name;
  });
  return out;
}

inline RankedFeatures rank_features(const AttributionSeries& attr, int n_grids = 1) {
  std::map<std::string, double> counts;
  for (const auto& w : attr.winners) {
    if (w) counts[attr.feature_names[*w]] += 1.0;
  }
  return rank_from_counts(counts, n_grids);
}

// Merged ranking across several attribution runs (one per grid).
inline RankedFeatures rank_features(const std::vector<AttributionSeries>& attrs, int n_grids) {
  std::map<std::string, double> counts;
  for (const auto& attr : attrs) {
    for (const auto& w : attr.winners) {
      if (w) counts[attr.feature_names[*w]] += 1.0;
    }
  }
  return rank_from_counts(counts, n_grids);
}

inline RankedFeatures topk(const RankedFeatures& ranked, std::size_t k) {
  require(k >= 1 && k <= ranked.size(), ErrorKind::KOutOfRange,
          "k=" + std::to_string(k) + " outside [1, " + std::to_string(ranked.size()) + "]");
  return RankedFeatures(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k));
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline void save_attribution(const AttributionSeries& a, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << "timestamp,winner";
  for (const auto& n : a.feature_names) out << ",delta_" << n;
  out << '\n';
  for (std::size_t t = 0; t < a.size(); ++t) {
    out << format_iso8601(a.timestamps[t]) << ',';
    if (a.winners[t]) out << a.feature_names[*a.winners[t]];
    for (std::size_t f = 0; f < a.feature_names.size(); ++f) {
      out << ',' << format_double(a.delta_at(t, f));
    }
    out << '\n';
  }
}

inline AttributionSeries load_attribution(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::IoFailure, "empty file '" + path + "'");
  auto header = split_csv_line(line);
  require(header.size() >= 3 && header[0] == "timestamp" && header[1] == "winner",
          ErrorKind::IoFailure, "not an attribution CSV: '" + path + "'");
  AttributionSeries a;
  for (std::size_t i = 2; i < header.size(); ++i) {
    require(header[i].rfind("delta_", 0) == 0, ErrorKind::IoFailure,
            "unexpected column '" + header[i] + "' in '" + path + "'");
    a.feature_names.push_back(header[i].substr(6));
  }
  const std::size_t F = a.feature_names.size();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != F + 2) {
      fail(ErrorKind::IoFailure, path + ":" + std::to_string(lineno) + ": field count mismatch");
    }
    a.timestamps.push_back(parse_iso8601(fields[0]));
    if (fields[1].empty()) {
      a.winners.push_back(std::nullopt);
    } else {
      const auto it = std::find(a.feature_names.begin(), a.feature_names.end(), fields[1]);
      require(it != a.feature_names.end(), ErrorKind::UnknownFeatureInRanking,
              "winner '" + fields[1] + "' is not a delta column in '" + path + "'");
      a.winners.push_back(static_cast<int>(it - a.feature_names.begin()));
    }
    for (std::size_t f = 0; f < F; ++f) {
      a.delta.push_back(parse_double(fields[2 + f], path + ":" + std::to_string(lineno)));
    }
  }
  a.exceedance_sets.resize(a.timestamps.size());
  a.scoring_passes = 0;  // unknown after a round-trip
  return a;
}

inline nlohmann::ordered_json ranking_to_json(const RankedFeatures& r) {
  auto j = nlohmann::ordered_json::array();
  for (const auto& f : r) {
    j.push_back({{"feature", f.name}, {"count", f.count}, {"frequency", f.frequency}});
  }
  return j;
}

// Accepts either our object form or a bare array of feature names (the
// format external rankings arrive in).
inline RankedFeatures ranking_from_json(const nlohmann::ordered_json& j) {
  require(j.is_array(), ErrorKind::InvalidConfig, "ranking JSON must be an array");
  RankedFeatures out;
  for (const auto& entry : j) {
    if (entry.is_string()) {
      out.push_back(RankedFeature{entry.get<std::string>(), 0.0, 0.0});
    } else {
      out.push_back(RankedFeature{entry.at("feature").get<std::string>(),
                                  entry.value("count", 0.0), entry.value("frequency", 0.0)});
    }
  }
  return out;
}

inline void save_ranking(const RankedFeatures& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << ranking_to_json(r).dump(1) << '\n';
}

inline RankedFeatures load_ranking(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open '" + path + "'");
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::IoFailure, "cannot parse '" + path + "': " + e.what());
  }
  return ranking_from_json(j);
}

}  // namespace anomattr
