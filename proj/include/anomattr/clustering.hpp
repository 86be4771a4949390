#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "anomattr/rng.hpp"
#include "anomattr/table.hpp"

namespace anomattr {

// Symmetric Pearson correlation matrix over the table's features.
struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<double> r;  // F x F row-major

  std::size_t size() const { return names.size(); }
  double at(std::size_t i, std::size_t j) const { return r[i * size() + j]; }
  double& at(std::size_t i, std::size_t j) { return r[i * size() + j]; }

  std::vector<double> row(std::size_t i) const {
    return {r.begin() + static_cast<std::ptrdiff_t>(i * size()),
            r.begin() + static_cast<std::ptrdiff_t>((i + 1) * size())};
  }
};

struct ClusterAssignment {
  int k = 0;
  std::vector<std::string> names;   // feature order of the source matrix
  std::vector<int> cluster_of;      // parallel to names, ids in [0, k)
  double silhouette = 0.0;
  double inertia = 0.0;

  int cluster(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return cluster_of[i];
    fail(ErrorKind::MissingColumn, "feature '" + name + "' not in assignment");
  }

  std::vector<std::vector<int>> members() const {
    std::vector<std::vector<int>> m(k);
    for (std::size_t i = 0; i < cluster_of.size(); ++i)
      m[cluster_of[i]].push_back(static_cast<int>(i));
    return m;
  }
};

// Pearson correlation of the table's columns. Constant columns correlate 0
// with everything (the 0/0 case is guarded) and 1 with themselves.
inline CorrelationMatrix correlation_matrix(const TimeTable& t) {
  require(t.rows() >= 2, ErrorKind::TooFewRows, "correlation needs at least 2 rows");
  const std::size_t F = t.features();
  const std::size_t M = t.rows();

  std::vector<double> mu(F, 0.0);
  for (std::size_t f = 0; f < F; ++f) mu[f] = mean(t.column(f));

  CorrelationMatrix c;
  c.names = t.feature_names;
  c.r.assign(F * F, 0.0);
  std::vector<double> ss(F, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    double s = 0.0;
    for (std::size_t r = 0; r < M; ++r) {
      const double d = t.at(r, f) - mu[f];
      s += d * d;
    }
    ss[f] = s;
  }
  for (std::size_t i = 0; i < F; ++i) {
    c.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < F; ++j) {
      double cov = 0.0;
      for (std::size_t r = 0; r < M; ++r) cov += (t.at(r, i) - mu[i]) * (t.at(r, j) - mu[j]);
      const double denom = std::sqrt(ss[i] * ss[j]);
      const double rij = denom == 0.0 ? 0.0 : cov / denom;
      c.at(i, j) = rij;
      c.at(j, i) = rij;
    }
  }
  return c;
}

namespace detail {

inline double sq_dist(const std::vector<double>& corr, std::size_t F, std::size_t i,
                      const std::vector<double>& centroid) {
  double s = 0.0;
  for (std::size_t d = 0; d < F; ++d) {
    const double diff = corr[i * F + d] - centroid[d];
    s += diff * diff;
  }
  return s;
}

}  // namespace detail

// Lloyd's algorithm over the rows of R (each feature represented by its
// correlation profile), k-means++ seeding. Converges when assignments are
// stable or after 300 iterations; an emptied cluster is repaired by moving
// the point farthest from its centroid. Optionally records the inertia after
// each iteration (it must never increase).
inline ClusterAssignment kmeans_features(const CorrelationMatrix& corr, int k,
                                         std::uint64_t seed,
                                         std::vector<double>* inertia_trace = nullptr) {
  const std::size_t F = corr.size();
  require(k >= 1 && static_cast<std::size_t>(k) <= F, ErrorKind::KOutOfRange,
          "k=" + std::to_string(k) + " outside [1, " + std::to_string(F) + "]");

  Rng rng(seed);
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  centroids.push_back(corr.row(rng.index(F)));
  std::vector<double> d2(F);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < F; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, detail::sq_dist(corr.r, F, i, c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick;
    if (total == 0.0) {
      pick = rng.index(F);
    } else {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = F - 1;
      for (std::size_t i = 0; i < F; ++i) {
        acc += d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    }
    centroids.push_back(corr.row(pick));
  }

  std::vector<int> assign(F, -1);
  double inertia = 0.0;
  for (int iter = 0; iter < 300; ++iter) {
    // assignment step
    std::vector<int> next(F);
    inertia = 0.0;
    for (std::size_t i = 0; i < F; ++i) {
      int best_c = 0;
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = detail::sq_dist(corr.r, F, i, centroids[c]);
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      next[i] = best_c;
      inertia += best;
    }
    // repair empty clusters with the globally farthest point
    for (int c = 0; c < k; ++c) {
      if (std::count(next.begin(), next.end(), c) > 0) continue;
      std::size_t farthest = 0;
      double worst = -1.0;
      for (std::size_t i = 0; i < F; ++i) {
        if (std::count(next.begin(), next.end(), next[i]) <= 1) continue;
        const double d = detail::sq_dist(corr.r, F, i, centroids[next[i]]);
        if (d > worst) {
          worst = d;
          farthest = i;
        }
      }
      next[farthest] = c;
    }
    if (inertia_trace) inertia_trace->push_back(inertia);
    if (next == assign) break;
    assign = std::move(next);
    // update step
    centroids.assign(k, std::vector<double>(F, 0.0));
    std::vector<int> counts(k, 0);
    for (std::size_t i = 0; i < F; ++i) {
      ++counts[assign[i]];
      for (std::size_t d = 0; d < F; ++d) centroids[assign[i]][d] += corr.r[i * F + d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (double& x : centroids[c]) x /= counts[c];
    }
  }

  // final inertia against the converged centroids
  inertia = 0.0;
  for (std::size_t i = 0; i < F; ++i)
    inertia += detail::sq_dist(corr.r, F, i, centroids[assign[i]]);

  ClusterAssignment a;
  a.k = k;
  a.names = corr.names;
  a.cluster_of = std::move(assign);
  a.inertia = inertia;
  return a;
}

// Mean silhouette coefficient, Euclidean distance on the rows of R.
// Singleton clusters contribute 0.
inline double silhouette(const CorrelationMatrix& corr, const ClusterAssignment& a) {
  require(a.k >= 2, ErrorKind::SingleCluster, "silhouette needs k >= 2");
  const std::size_t F = corr.size();
  const auto members = a.members();
  for (const auto& m : members) {
    require(!m.empty(), ErrorKind::EmptyCluster, "silhouette: empty cluster");
  }

  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t d = 0; d < F; ++d) {
      const double diff = corr.r[i * F + d] - corr.r[j * F + d];
      s += diff * diff;
    }
    return std::sqrt(s);
  };

  double total = 0.0;
  for (std::size_t i = 0; i < F; ++i) {
    const int ci = a.cluster_of[i];
    if (members[ci].size() == 1) continue;  // contributes 0
    double aa = 0.0;
    for (int j : members[ci]) {
      if (static_cast<std::size_t>(j) != i) aa += dist(i, j);
    }
    aa /= static_cast<double>(members[ci].size() - 1);
    double bb = std::numeric_limits<double>::infinity();
    for (int c = 0; c < a.k; ++c) {
      if (c == ci) continue;
      double d = 0.0;
      for (int j : members[c]) d += dist(i, j);
      bb = std::min(bb, d / static_cast<double>(members[c].size()));
    }
    const double m = std::max(aa, bb);
    total += m == 0.0 ? 0.0 : (bb - aa) / m;
  }
  return total / static_cast<double>(F);
}

// Runs kmeans_features for each k in [k_min, k_max] and picks the elbow: the
// interior k maximizing the second difference of the inertia curve, ties
// toward smaller k. When the range has no interior point the fallback is
// k_min. The chosen assignment gets its silhouette attached (0 for k = 1,
// where the coefficient is undefined).
inline ClusterAssignment select_k(const CorrelationMatrix& corr, int k_min, int k_max,
                                  std::uint64_t seed) {
  const int F = static_cast<int>(corr.size());
  require(k_min >= 1 && k_min < k_max && k_max <= F, ErrorKind::KOutOfRange,
          "need 1 <= k_min < k_max <= F");

  std::map<int, ClusterAssignment> runs;
  for (int k = k_min; k <= k_max; ++k) {
    runs.emplace(k, kmeans_features(corr, k, seed + static_cast<std::uint64_t>(k)));
  }

  int chosen = k_min;
  double best = -std::numeric_limits<double>::infinity();
  for (int k = k_min + 1; k < k_max; ++k) {
    const double d2 = runs.at(k - 1).inertia - 2.0 * runs.at(k).inertia + runs.at(k + 1).inertia;
    if (d2 > best) {
      best = d2;
      chosen = k;
    }
  }

  ClusterAssignment a = runs.at(chosen);
  a.silhouette = a.k >= 2 ? silhouette(corr, a) : 0.0;
  return a;
}

inline nlohmann::ordered_json assignment_to_json(const ClusterAssignment& a) {
  nlohmann::ordered_json j;
  j["k"] = a.k;
  j["silhouette"] = a.silhouette;
  j["inertia"] = a.inertia;
  auto m = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < a.names.size(); ++i) m[a.names[i]] = a.cluster_of[i];
  j["assignment"] = m;
  return j;
}

inline ClusterAssignment assignment_from_json(const nlohmann::ordered_json& j) {
  ClusterAssignment a;
  a.k = j.at("k").get<int>();
  a.silhouette = j.value("silhouette", 0.0);
  a.inertia = j.value("inertia", 0.0);
  for (const auto& [name, cid] : j.at("assignment").items()) {
    a.names.push_back(name);
    a.cluster_of.push_back(cid.get<int>());
  }
  require(a.k >= 1, ErrorKind::KOutOfRange, "assignment JSON has k < 1");
  for (int c : a.cluster_of) {
    require(c >= 0 && c < a.k, ErrorKind::KOutOfRange, "cluster id outside [0, k)");
  }
  return a;
}

}  // namespace anomattr
