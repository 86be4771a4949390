#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "anomattr/table.hpp"

namespace anomattr {

struct AggregateOptions {
  int period_days = 5;
  bool drop_leap = true;
  // When true, aggregation blocks restart at each contiguous daily run (so a
  // month-filtered series restarts its blocks every retained season); when
  // false only calendar-year boundaries break blocks.
  bool restart_runs = true;
};

// Keeps only rows whose calendar month is in `months` (1..12).
inline TimeTable filter_months(const TimeTable& t, const std::set<int>& months) {
  TimeTable out;
  out.grid_id = t.grid_id;
  out.feature_names = t.feature_names;
  out.units = t.units;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (!months.count(month_of(t.timestamps[r]))) continue;
    out.timestamps.push_back(t.timestamps[r]);
    for (std::size_t f = 0; f < t.features(); ++f) out.values.push_back(t.at(r, f));
  }
  require(!out.timestamps.empty(), ErrorKind::EmptyInput, "no rows left after month filter");
  return out;
}

// Replaces consecutive blocks of `period_days` rows by their per-feature mean.
// Leap days are removed first when drop_leap is set; blocks never straddle a
// calendar year, and the timestamp of an output row is the first day of its
// block. A trailing block shorter than the period is dropped.
inline TimeTable aggregate_time(const TimeTable& t, const AggregateOptions& opt) {
  require(opt.period_days >= 1, ErrorKind::InvalidConfig, "period_days must be >= 1");
  const std::size_t F = t.features();

  std::vector<std::size_t> keep;
  keep.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (opt.drop_leap && is_leap_day(t.timestamps[r])) continue;
    keep.push_back(r);
  }

  TimeTable out;
  out.grid_id = t.grid_id;
  out.feature_names = t.feature_names;
  out.units = t.units;

  std::size_t i = 0;
  while (i < keep.size()) {
    // find the end of the current run
    std::size_t j = i + 1;
    while (j < keep.size()) {
      const std::int64_t prev = t.timestamps[keep[j - 1]];
      const std::int64_t cur = t.timestamps[keep[j]];
      if (year_of(cur) != year_of(prev)) break;
      // a removed leap day leaves a 2-day gap, which stays inside the run
      if (opt.restart_runs && cur - prev > 2 * kSecondsPerDay) break;
      ++j;
    }
    // full blocks within [i, j)
    const std::size_t run_len = j - i;
    const std::size_t blocks = run_len / static_cast<std::size_t>(opt.period_days);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t begin = i + b * opt.period_days;
      out.timestamps.push_back(t.timestamps[keep[begin]]);
      for (std::size_t f = 0; f < F; ++f) {
        double s = 0.0;
        for (int d = 0; d < opt.period_days; ++d) s += t.at(keep[begin + d], f);
        out.values.push_back(s / opt.period_days);
      }
    }
    i = j;
  }

  require(!out.timestamps.empty(), ErrorKind::EmptyAfterAggregation,
          "aggregation produced no complete blocks");
  return out;
}

// Appends tw10 = sqrt(u10^2 + v10^2) and ssrdas = ssrd * (1 - asn).
inline TimeTable derive_features(const TimeTable& t) {
  const std::size_t u10 = t.feature_index("u10");
  const std::size_t v10 = t.feature_index("v10");
  const std::size_t ssrd = t.feature_index("ssrd");
  const std::size_t asn = t.feature_index("asn");
  require(!t.has_feature("tw10") && !t.has_feature("ssrdas"), ErrorKind::UnexpectedColumn,
          "derived feature already present");
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const double a = t.at(r, asn);
    if (a < 0.0 || a > 1.0) {
      fail(ErrorKind::AlbedoOutOfRange,
           "asn=" + format_double(a) + " at " + format_iso8601(t.timestamps[r]));
    }
  }

  TimeTable out;
  out.grid_id = t.grid_id;
  out.timestamps = t.timestamps;
  out.feature_names = t.feature_names;
  out.feature_names.push_back("tw10");
  out.feature_names.push_back("ssrdas");
  out.units = t.units;
  out.units.resize(out.feature_names.size(), "");
  out.values.reserve(t.rows() * out.features());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t f = 0; f < t.features(); ++f) out.values.push_back(t.at(r, f));
    out.values.push_back(std::hypot(t.at(r, u10), t.at(r, v10)));
    out.values.push_back(t.at(r, ssrd) * (1.0 - t.at(r, asn)));
  }
  return out;
}

struct ZScoreResult {
  TimeTable table;
  NormStats stats;
};

// Standardizes each column to zero mean and unit population variance. With
// supplied stats the transform is applied as-is; otherwise stats are fitted
// on the input. Zero-variance columns map to all-zero and are flagged.
inline ZScoreResult zscore(const TimeTable& t, const std::optional<NormStats>& given = {}) {
  const std::size_t F = t.features();
  NormStats stats;
  if (given) {
    require(given->names == t.feature_names, ErrorKind::ModelDataMismatch,
            "supplied NormStats do not match the table's features");
    stats = *given;
  } else {
    require(t.rows() >= 2, ErrorKind::TooFewRows, "need at least 2 rows to fit NormStats");
    stats.names = t.feature_names;
    stats.mean.resize(F);
    stats.stddev.resize(F);
    stats.degenerate.resize(F);
    for (std::size_t f = 0; f < F; ++f) {
      auto col = t.column(f);
      stats.mean[f] = mean(col);
      stats.stddev[f] = std::sqrt(variance_pop(col));
      stats.degenerate[f] = stats.stddev[f] == 0.0;
    }
  }

  ZScoreResult out;
  out.stats = stats;
  out.table = t;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t f = 0; f < F; ++f) {
      out.table.at(r, f) = stats.degenerate[f]
                               ? 0.0
                               : (t.at(r, f) - stats.mean[f]) / stats.stddev[f];
    }
  }
  return out;
}

// Inverse of a fitted zscore transform; degenerate columns map back to their mean.
inline TimeTable zscore_invert(const TimeTable& t, const NormStats& stats) {
  require(stats.names == t.feature_names, ErrorKind::ModelDataMismatch,
          "NormStats do not match the table's features");
  TimeTable out = t;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t f = 0; f < t.features(); ++f) {
      out.at(r, f) = stats.degenerate[f] ? stats.mean[f]
                                         : t.at(r, f) * stats.stddev[f] + stats.mean[f];
    }
  }
  return out;
}

namespace detail {

// Groups row indices by calendar year, preserving order.
inline std::map<int, std::vector<std::size_t>> rows_by_year(const TimeTable& t) {
  std::map<int, std::vector<std::size_t>> by_year;
  for (std::size_t r = 0; r < t.rows(); ++r) by_year[year_of(t.timestamps[r])].push_back(r);
  return by_year;
}

}  // namespace detail

// Per feature and calendar year, replaces values strictly outside the fences
// [Q1 - 1.5*IQR, Q3 + 1.5*IQR] (quartiles by linear interpolation, fences
// inclusive) with the mean of that year's inlier values. The replacement is
// repeated until the year is stable, so the operation is a fixpoint and
// applying it twice equals applying it once.
inline TimeTable iqr_clean(const TimeTable& t) {
  TimeTable out = t;
  const auto by_year = detail::rows_by_year(t);
  for (const auto& [year, rows] : by_year) {
    require(rows.size() >= 4, ErrorKind::TooFewRows,
            "year " + std::to_string(year) + " has only " + std::to_string(rows.size()) +
                " rows; need at least 4");
  }

  for (std::size_t f = 0; f < t.features(); ++f) {
    for (const auto& [year, rows] : by_year) {
      std::vector<double> vals(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) vals[i] = out.at(rows[i], f);

      for (int pass = 0; pass < 1000; ++pass) {
        std::vector<double> sorted = vals;
        std::sort(sorted.begin(), sorted.end());
        const double q1 = quantile_sorted(sorted, 0.25);
        const double q3 = quantile_sorted(sorted, 0.75);
        const double iqr = q3 - q1;
        const double lo = q1 - 1.5 * iqr;
        const double hi = q3 + 1.5 * iqr;

        double inlier_sum = 0.0;
        std::size_t inlier_count = 0;
        for (double v : vals) {
          if (v >= lo && v <= hi) {
            inlier_sum += v;
            ++inlier_count;
          }
        }
        if (inlier_count == vals.size()) break;
        if (inlier_count == 0) {
          fail(ErrorKind::AllOutliers, "every value outside the fences in year " +
                                           std::to_string(year) + ", feature '" +
                                           t.feature_names[f] + "'");
        }
        const double repl = inlier_sum / static_cast<double>(inlier_count);
        for (double& v : vals) {
          if (v < lo || v > hi) v = repl;
        }
      }
      for (std::size_t i = 0; i < rows.size(); ++i) out.at(rows[i], f) = vals[i];
    }
  }
  return out;
}

// Overlapping rolling windows; origin_index maps each window to the source
// row of its last timestep.
inline WindowSet window(const TimeTable& t, int T, int stride = 1) {
  require(T >= 1 && stride >= 1, ErrorKind::InvalidConfig, "T and stride must be positive");
  if (t.rows() < static_cast<std::size_t>(T)) {
    fail(ErrorKind::SeriesTooShort, "need at least " + std::to_string(T) + " rows, have " +
                                        std::to_string(t.rows()));
  }
  const std::size_t F = t.features();
  const std::size_t count = (t.rows() - T) / stride + 1;

  WindowSet ws;
  ws.feature_names = t.feature_names;
  ws.T = T;
  ws.stride = stride;
  ws.origin_index.reserve(count);
  ws.origin_timestamps.reserve(count);
  ws.data.reserve(count * T * F);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t begin = w * stride;
    ws.origin_index.push_back(begin + T - 1);
    ws.origin_timestamps.push_back(t.timestamps[begin + T - 1]);
    const auto* src = &t.values[begin * F];
    ws.data.insert(ws.data.end(), src, src + static_cast<std::size_t>(T) * F);
  }
  return ws;
}

}  // namespace anomattr
