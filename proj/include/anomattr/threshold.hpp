#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "anomattr/clv.hpp"
#include "anomattr/util.hpp"

namespace anomattr {

// Generalized Pareto fit to the exceedances over an initial threshold u.
struct GpdFit {
  double shape = 0.0;       // xi
  double scale = 1.0;       // sigma > 0
  double threshold_u = 0.0; // initial (empirical-quantile) threshold
  std::size_t n_exceedances = 0;
  bool degraded = false;    // too few exceedances; fell back to an empirical quantile
};

struct PotResult {
  GpdFit fit;
  double final_threshold = 0.0;
};

// Method-of-moments GPD estimator (Hosking & Wallis 1987) on positive
// exceedances:
//   xi    = (1 - mbar^2 / s^2) / 2
//   sigma = mbar (mbar^2 / s^2 + 1) / 2
// with mbar, s^2 the mean and (sample) variance of the exceedances.
inline GpdFit fit_gpd_moments(std::span<const double> exceedances) {
  require(exceedances.size() >= 2, ErrorKind::TooFewExceedances,
          "need at least 2 exceedances for a moment fit");
  const double mbar = mean(exceedances);
  const double s2 = variance_sample(exceedances);
  require(s2 > 0.0, ErrorKind::TooFewExceedances, "exceedances have zero variance");
  GpdFit fit;
  fit.n_exceedances = exceedances.size();
  const double ratio = mbar * mbar / s2;
  fit.shape = 0.5 * (1.0 - ratio);
  fit.scale = 0.5 * mbar * (ratio + 1.0);
  return fit;
}

// Peaks-Over-Threshold: u is the empirical `init_quantile` of the scores and
// a GPD is moment-fitted to the exceedances x - u > 0. The final threshold
// solving P(X > z_q) = risk_q is
//   z_q = u + (sigma/xi) ((risk_q n / N_u)^(-xi) - 1)
// and u - sigma log(risk_q n / N_u) in the xi -> 0 limit. With fewer than 5
// exceedances (or zero exceedance variance) the fit is reported as degraded
// and the threshold falls back to the empirical 1 - risk_q quantile.
inline PotResult fit_pot(std::span<const double> scores, double init_quantile, double risk_q) {
  require(scores.size() >= 30, ErrorKind::TooFewSamples,
          "POT needs at least 30 scores, got " + std::to_string(scores.size()));
  require(init_quantile > 0.8 && init_quantile < 1.0, ErrorKind::InvalidConfig,
          "init_quantile must be in (0.8, 1)");
  require(risk_q > 0.0 && risk_q < 0.1, ErrorKind::InvalidConfig, "risk_q must be in (0, 0.1)");

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double u = quantile_sorted(sorted, init_quantile);

  std::vector<double> exceed;
  for (double x : scores) {
    if (x > u) exceed.push_back(x - u);
  }

  PotResult res;
  res.fit.threshold_u = u;
  res.fit.n_exceedances = exceed.size();

  if (exceed.size() < 5 || variance_sample(exceed) == 0.0) {
    res.fit.degraded = true;
    res.final_threshold = quantile_sorted(sorted, 1.0 - risk_q);
    return res;
  }
  const double u_saved = res.fit.threshold_u;
  res.fit = fit_gpd_moments(exceed);
  res.fit.threshold_u = u_saved;

  const double n = static_cast<double>(scores.size());
  const double nu = static_cast<double>(exceed.size());
  const double arg = risk_q * n / nu;
  if (std::abs(res.fit.shape) < 1e-9) {
    res.final_threshold = u - res.fit.scale * std::log(arg);
  } else {
    res.final_threshold =
        u + res.fit.scale / res.fit.shape * (std::pow(arg, -res.fit.shape) - 1.0);
  }
  return res;
}

// Per-timestamp threshold with flag; `scores` is carried along so the series
// round-trips through its CSV form.
struct ThresholdSeries {
  std::vector<std::int64_t> timestamps;
  std::vector<double> scores;
  std::vector<double> thresholds;
  std::vector<bool> flags;

  std::size_t size() const { return timestamps.size(); }
};

// Recomputes the POT threshold over a window sliding by half its span.
// Segments start at 0, h, 2h, ... (h = window/2); the threshold fitted on a
// segment governs the newly revealed trailing indices, segment 0 also covers
// its own first half, and a trailing partial segment is merged into its
// predecessor. Every index is thresholded exactly once.
inline ThresholdSeries dynamic_threshold(const ScoreSeries& s, int window, double init_quantile,
                                         double risk_q) {
  const std::size_t n = s.size();
  // every segment is at least `window` long, so this keeps fit_pot above its
  // 30-sample floor
  require(window >= 30, ErrorKind::InvalidConfig, "window must be at least 30");
  if (static_cast<std::size_t>(window) > n) {
    fail(ErrorKind::WindowTooLarge,
         "window " + std::to_string(window) + " exceeds series length " + std::to_string(n));
  }

  ThresholdSeries out;
  out.timestamps = s.timestamps;
  out.scores = s.scores;
  out.thresholds.assign(n, 0.0);
  out.flags.assign(n, false);

  const std::size_t h = static_cast<std::size_t>(window) / 2;
  std::vector<std::size_t> starts;
  for (std::size_t start = 0; start + window <= n; start += h) starts.push_back(start);
  const std::size_t K = starts.size() - 1;

  for (std::size_t i = 0; i <= K; ++i) {
    const std::size_t seg_begin = starts[i];
    const std::size_t seg_end = (i == K) ? n : seg_begin + window;  // last segment absorbs the tail
    const auto fit = fit_pot(std::span<const double>(s.scores).subspan(seg_begin, seg_end - seg_begin),
                             init_quantile, risk_q);
    const std::size_t cover_begin = (i == 0) ? 0 : seg_begin + window - h;
    const std::size_t cover_end = (i == K) ? n : seg_begin + window;
    for (std::size_t t = cover_begin; t < cover_end; ++t) out.thresholds[t] = fit.final_threshold;
  }
  return out;
}

// Fills flags with the strict comparison score > threshold.
inline ThresholdSeries flag_anomalies(const ScoreSeries& s, const ThresholdSeries& thresholds) {
  require(s.size() == thresholds.size(), ErrorKind::LengthMismatch,
          "scores and thresholds have different lengths");
  ThresholdSeries out = thresholds;
  out.scores = s.scores;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.flags[i] = s.scores[i] > out.thresholds[i];
  }
  return out;
}

inline void save_threshold_series(const ThresholdSeries& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << "timestamp,score,threshold,flag\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << format_iso8601(t.timestamps[i]) << ',' << format_double(t.scores[i]) << ','
        << format_double(t.thresholds[i]) << ',' << (t.flags[i] ? '1' : '0') << '\n';
  }
}

inline ThresholdSeries load_threshold_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::IoFailure, "empty file '" + path + "'");
  ThresholdSeries t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 4) {
      fail(ErrorKind::IoFailure, path + ":" + std::to_string(lineno) + ": expected 4 fields");
    }
    const std::string ctx = path + ":" + std::to_string(lineno);
    t.timestamps.push_back(parse_iso8601(fields[0]));
    t.scores.push_back(parse_double(fields[1], ctx));
    t.thresholds.push_back(parse_double(fields[2], ctx));
    t.flags.push_back(parse_double(fields[3], ctx) != 0.0);
  }
  return t;
}

}  // namespace anomattr
