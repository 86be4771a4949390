#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "anomattr/threshold.hpp"
#include "anomattr/util.hpp"

namespace anomattr {

// ---------------------------------------------------------------------------
// Regularized incomplete beta function, needed for t-distribution p-values.
// Continued-fraction evaluation (modified Lentz), accurate to ~1e-14.
// ---------------------------------------------------------------------------

namespace detail {

inline double lbeta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

inline double ibeta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

}  // namespace detail

inline double ibeta_reg(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, ErrorKind::InvalidConfig, "ibeta_reg: a, b must be positive");
  require(x >= 0.0 && x <= 1.0, ErrorKind::InvalidConfig, "ibeta_reg: x must be in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double front =
      std::exp(a * std::log(x) + b * std::log1p(-x) - detail::lbeta(a, b));
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * detail::ibeta_cf(a, b, x) / a;
  }
  return 1.0 - front * detail::ibeta_cf(b, a, 1.0 - x) / b;
}

// Two-sided p-value of Student's t with `dof` degrees of freedom.
inline double t_two_sided_p(double t, double dof) {
  require(dof > 0.0, ErrorKind::InvalidConfig, "t_two_sided_p: dof must be positive");
  if (t == 0.0) return 1.0;
  return ibeta_reg(0.5 * dof, 0.5, dof / (dof + t * t));
}

// ---------------------------------------------------------------------------
// Welch's unequal-variance t-test
// ---------------------------------------------------------------------------

struct TTestResult {
  double t_stat = 0.0;
  double p_value = 1.0;
  double dof = 0.0;
};

// t > 0 iff mean(a) > mean(b); dof by Welch-Satterthwaite; two-sided p-value.
inline TTestResult welch_ttest(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, ErrorKind::TooFewSamples,
          "welch_ttest needs at least 2 values per sample");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = mean(a);
  const double mb = mean(b);
  const double sea = variance_sample(a) / na;
  const double seb = variance_sample(b) / nb;
  const double se2 = sea + seb;
  if (se2 == 0.0) {
    // both samples constant; identical means give the degenerate t = 0, p = 1
    require(ma == mb, ErrorKind::TooFewSamples,
            "both samples have zero variance but different means");
    return TTestResult{0.0, 1.0, na + nb - 2.0};
  }
  TTestResult r;
  r.t_stat = (ma - mb) / std::sqrt(se2);
  r.dof = se2 * se2 / (sea * sea / (na - 1.0) + seb * seb / (nb - 1.0));
  r.p_value = t_two_sided_p(r.t_stat, r.dof);
  return r;
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double pr_auc = 0.0;
  double roc_auc = 0.0;
};

// Point metrics at the strict threshold plus trapezoidal PR-AUC / ROC-AUC
// over all distinct score values (ties grouped, so ROC-AUC equals the
// pairwise concordance probability with ties counted half).
inline MetricsReport metrics(std::span<const double> scores, const std::vector<bool>& labels,
                             double threshold) {
  require(scores.size() == labels.size(), ErrorKind::LengthMismatch,
          "scores and labels have different lengths");
  std::size_t P = 0;
  for (bool l : labels) P += l;
  const std::size_t N = labels.size() - P;
  require(P >= 1 && N >= 1, ErrorKind::DegenerateLabels,
          "need at least one positive and one negative label");

  MetricsReport rep;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > threshold) {
      if (labels[i]) ++tp; else ++fp;
    }
  }
  rep.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  rep.recall = static_cast<double>(tp) / static_cast<double>(P);
  rep.f1 = (rep.precision + rep.recall) > 0.0
               ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
               : 0.0;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });

  double roc = 0.0, pr = 0.0;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  double prev_rec = 0.0, prev_prec = 1.0;
  std::size_t ctp = 0, cfp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]]) ++ctp; else ++cfp;
      ++j;
    }
    const double tpr = static_cast<double>(ctp) / static_cast<double>(P);
    const double fpr = static_cast<double>(cfp) / static_cast<double>(N);
    roc += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
    const double prec = static_cast<double>(ctp) / static_cast<double>(ctp + cfp);
    pr += (tpr - prev_rec) * (prec + prev_prec) * 0.5;
    prev_tpr = tpr;
    prev_fpr = fpr;
    prev_rec = tpr;
    prev_prec = prec;
    i = j;
  }
  rep.roc_auc = roc;
  rep.pr_auc = pr;
  return rep;
}

// ---------------------------------------------------------------------------
// Decadal / monthly anomaly aggregation
// ---------------------------------------------------------------------------

struct DecadalRow {
  int decade_start = 0;  // 1951, 1961, ...
  int month = 0;
  double mean_count_per_grid = 0.0;
};

// Decade boundaries are anchored to 1951-1960, 1961-1970, ...
inline int decade_start_of(int year) {
  int offset = year - 1951;
  if (offset < 0) offset -= 9;  // floor toward earlier decades
  return 1951 + 10 * (offset / 10);
}

// Counts flags per (decade, month, grid) and averages over all grids in the
// collection. Cells are those (decade, month) combinations covered by the
// input timestamps; an empty `months` set keeps every month.
inline std::vector<DecadalRow> decadal_counts(
    const std::vector<std::pair<std::string, ThresholdSeries>>& by_grid,
    const std::set<int>& months = {}) {
  require(!by_grid.empty(), ErrorKind::EmptyInput, "no grids supplied");
  const double n_grids = static_cast<double>(by_grid.size());

  std::map<std::pair<int, int>, double> flag_counts;
  std::set<std::pair<int, int>> cells;
  for (const auto& [grid, series] : by_grid) {
    for (std::size_t i = 0; i < series.size(); ++i) {
      const int m = month_of(series.timestamps[i]);
      if (!months.empty() && !months.count(m)) continue;
      const auto cell = std::make_pair(decade_start_of(year_of(series.timestamps[i])), m);
      cells.insert(cell);
      if (series.flags[i]) flag_counts[cell] += 1.0;
    }
  }

  std::vector<DecadalRow> out;
  out.reserve(cells.size());
  for (const auto& [decade, month] : cells) {
    const auto it = flag_counts.find({decade, month});
    out.push_back(DecadalRow{decade, month, (it == flag_counts.end() ? 0.0 : it->second) / n_grids});
  }
  return out;
}

inline void save_decadal(const std::vector<DecadalRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << "decade,month,mean_count_per_grid\n";
  for (const auto& r : rows) {
    out << r.decade_start << '-' << (r.decade_start + 9) << ',' << r.month << ','
        << format_double(r.mean_count_per_grid) << '\n';
  }
}

}  // namespace anomattr
