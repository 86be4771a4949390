#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "anomattr/rng.hpp"
#include "anomattr/table.hpp"

namespace anomattr {

// Seeded generator for climate-like multivariate series: block-correlated
// Gaussian noise plus per-block seasonal sines, with planted anomalies whose
// culprit features are known.
struct SynthConfig {
  int features = 8;
  int length = 5000;
  std::vector<std::vector<int>> blocks;  // partition of [0, F); empty = two halves
  double rho = 0.8;                      // within-block correlation, [0, 1)
  double seasonal_period = 60.0;         // in timesteps; <= 0 disables
  double seasonal_amplitude = 0.5;
  double anomaly_rate = 0.02;            // fraction of flagged timesteps, [0, 0.2]
  enum class Culprits { Single, Multi } culprit_policy = Culprits::Single;
  double magnitude = 6.0;                // in units of the base-signal sigma
  int min_gap = 28;                      // minimum spacing between event starts
  std::int64_t start_timestamp = 10957LL * kSecondsPerDay;  // 2000-01-01, daily steps
  std::uint64_t seed = 0;
};

struct GroundTruth {
  std::vector<bool> flag;                     // per timestamp
  std::vector<std::vector<std::string>> culprits;  // non-empty exactly where flagged
};

namespace detail {

inline std::vector<std::vector<int>> default_blocks(int features) {
  std::vector<std::vector<int>> blocks(2);
  for (int f = 0; f < features; ++f) blocks[f < (features + 1) / 2 ? 0 : 1].push_back(f);
  if (blocks[1].empty()) blocks.pop_back();
  return blocks;
}

}  // namespace detail

inline std::pair<TimeTable, GroundTruth> generate(const SynthConfig& cfg) {
  require(cfg.features >= 2 && cfg.length >= 2, ErrorKind::InvalidConfig,
          "need at least 2 features and 2 timesteps");
  require(cfg.rho >= 0.0 && cfg.rho < 1.0, ErrorKind::InvalidConfig, "rho must be in [0, 1)");
  require(cfg.anomaly_rate >= 0.0 && cfg.anomaly_rate <= 0.2, ErrorKind::InvalidConfig,
          "anomaly_rate must be in [0, 0.2]");
  if (cfg.anomaly_rate > 0.0) {
    require(cfg.magnitude >= 3.0, ErrorKind::InvalidConfig,
            "planted events need magnitude >= 3 sigma");
  }

  const int F = cfg.features;
  const int M = cfg.length;
  auto blocks = cfg.blocks.empty() ? detail::default_blocks(F) : cfg.blocks;
  {
    std::vector<int> seen(F, 0);
    for (const auto& b : blocks)
      for (int f : b) {
        require(f >= 0 && f < F, ErrorKind::InvalidConfig, "block feature index out of range");
        ++seen[f];
      }
    for (int f = 0; f < F; ++f) {
      require(seen[f] == 1, ErrorKind::InvalidConfig, "blocks must partition the features");
    }
  }
  std::vector<int> block_of(F, 0);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (int f : blocks[b]) block_of[f] = static_cast<int>(b);

  TimeTable t;
  t.feature_names.reserve(F);
  for (int f = 0; f < F; ++f) t.feature_names.push_back("f" + std::to_string(f + 1));
  t.units.assign(F, "");
  t.timestamps.reserve(M);
  for (int r = 0; r < M; ++r) t.timestamps.push_back(cfg.start_timestamp + r * kSecondsPerDay);
  t.values.resize(static_cast<std::size_t>(M) * F);

  Rng rng(cfg.seed);
  const double shared = std::sqrt(cfg.rho);
  const double own = std::sqrt(1.0 - cfg.rho);
  const double tau = 2.0 * 3.14159265358979323846;
  for (int r = 0; r < M; ++r) {
    std::vector<double> g(blocks.size());
    for (double& x : g) x = rng.normal();
    for (int f = 0; f < F; ++f) {
      const int b = block_of[f];
      double v = shared * g[b] + own * rng.normal();
      if (cfg.seasonal_period > 0.0 && cfg.seasonal_amplitude != 0.0) {
        const double phase = tau * static_cast<double>(b) / static_cast<double>(blocks.size());
        v += cfg.seasonal_amplitude * std::sin(tau * r / cfg.seasonal_period + phase);
      }
      t.at(r, f) = v;
    }
  }

  GroundTruth gt;
  gt.flag.assign(M, false);
  gt.culprits.resize(M);

  const auto target = static_cast<std::size_t>(std::llround(cfg.anomaly_rate * M));
  // base-signal std: unit-variance noise plus the seasonal component
  const double sigma = std::sqrt(1.0 + (cfg.seasonal_period > 0.0
                                            ? 0.5 * cfg.seasonal_amplitude * cfg.seasonal_amplitude
                                            : 0.0));
  std::size_t flagged = 0;
  std::vector<int> starts;
  int attempts = 0;
  while (flagged < target && attempts < 100000) {
    ++attempts;
    const int len = std::min<int>(1 + static_cast<int>(rng.index(3)),
                                  static_cast<int>(target - flagged));
    const int start = static_cast<int>(rng.index(static_cast<std::size_t>(M - len)));
    bool clash = false;
    for (int s : starts) {
      if (std::abs(s - start) < cfg.min_gap) {
        clash = true;
        break;
      }
    }
    if (clash) continue;

    int n_culprits = 1;
    if (cfg.culprit_policy == SynthConfig::Culprits::Multi) {
      n_culprits = 1 + static_cast<int>(rng.index(std::min(3, F)));
    }
    std::vector<int> culprits;
    while (static_cast<int>(culprits.size()) < n_culprits) {
      const int f = static_cast<int>(rng.index(static_cast<std::size_t>(F)));
      if (std::find(culprits.begin(), culprits.end(), f) == culprits.end()) culprits.push_back(f);
    }
    std::sort(culprits.begin(), culprits.end());

    starts.push_back(start);
    for (int i = 0; i < len; ++i) {
      const int r = start + i;
      gt.flag[r] = true;
      for (int f : culprits) {
        t.at(r, f) += cfg.magnitude * sigma;
        gt.culprits[r].push_back(t.feature_names[f]);
      }
      ++flagged;
    }
  }
  require(flagged >= target, ErrorKind::InvalidConfig,
          "could not place the requested anomaly rate; lower the rate or min_gap");
  return {std::move(t), std::move(gt)};
}

// Single-cell additive perturbation.
inline TimeTable inject(const TimeTable& t, std::size_t row, const std::string& feature,
                        double magnitude) {
  require(row < t.rows(), ErrorKind::IndexOutOfRange, "row out of range");
  TimeTable out = t;
  out.at(row, out.feature_index(feature)) += magnitude;
  return out;
}

inline nlohmann::ordered_json ground_truth_to_json(const GroundTruth& gt) {
  auto j = nlohmann::ordered_json::object();
  for (std::size_t r = 0; r < gt.flag.size(); ++r) {
    if (gt.flag[r]) j[std::to_string(r)] = gt.culprits[r];
  }
  return j;
}

inline GroundTruth ground_truth_from_json(const nlohmann::ordered_json& j, std::size_t length) {
  GroundTruth gt;
  gt.flag.assign(length, false);
  gt.culprits.resize(length);
  for (const auto& [key, culprits] : j.items()) {
    const auto r = static_cast<std::size_t>(std::stoull(key));
    require(r < length, ErrorKind::IndexOutOfRange, "ground-truth index out of range");
    gt.flag[r] = true;
    gt.culprits[r] = culprits.get<std::vector<std::string>>();
  }
  return gt;
}

inline void save_ground_truth(const GroundTruth& gt, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << ground_truth_to_json(gt).dump(1) << '\n';
}

}  // namespace anomattr
