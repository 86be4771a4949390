#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "anomattr/attribution.hpp"
#include "anomattr/synth.hpp"
#include "helpers.hpp"

using namespace anomattr;
using testutil::daily_table;

namespace {

ClusterAssignment halves(const std::vector<std::string>& names) {
  ClusterAssignment a;
  a.k = 2;
  a.names = names;
  for (std::size_t i = 0; i < names.size(); ++i)
    a.cluster_of.push_back(i < names.size() / 2 ? 0 : 1);
  return a;
}

struct MiniPipeline {
  TimeTable table;          // normalized
  GroundTruth truth;
  ModelCheckpoint model;
  ScoreSeries baseline;
  ThresholdSeries flags;
};

// small end-to-end run with planted single-feature anomalies
MiniPipeline make_pipeline(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.features = 4;
  cfg.length = 600;
  cfg.blocks = {{0, 1}, {2, 3}};
  cfg.rho = 0.8;
  cfg.anomaly_rate = 0.05;
  cfg.magnitude = 6.0;
  cfg.min_gap = 16;
  cfg.seed = seed;
  auto [raw, truth] = generate(cfg);
  auto z = zscore(raw);

  MiniPipeline p{std::move(z.table), std::move(truth), {}, {}, {}};
  auto model = build_model(halves(p.table.feature_names), p.table.feature_names,
                           {.T = 8, .encoder_width = 16, .latent_dim = 2, .seed = seed});
  model.norm_stats = z.stats;
  const auto ws = window(p.table, 8);
  p.model = train(model, ws,
                  {.epochs = 15, .patience = 15, .batch = 32, .lr = 3e-3,
                   .val_fraction = 0.2, .seed = seed})
                .model;
  p.baseline = score_series(p.model, ws);
  p.flags = flag_anomalies(p.baseline, dynamic_threshold(p.baseline, 60, 0.9, 0.05));
  return p;
}

}  // namespace

TEST_CASE("counterfactual_table replaces per-year medians", "[attribution]") {
  // two years: [1,2,3] and [10,20,30]
  TimeTable t;
  t.feature_names = {"x", "y"};
  t.units = {"", ""};
  const char* days[6] = {"2001-05-01", "2001-05-02", "2001-05-03",
                         "2002-05-01", "2002-05-02", "2002-05-03"};
  const double xs[6] = {1, 2, 3, 10, 20, 30};
  for (int i = 0; i < 6; ++i) {
    t.timestamps.push_back(parse_iso8601(days[i]));
    t.values.push_back(xs[i]);
    t.values.push_back(100.0 + i);
  }
  const auto cf = counterfactual_table(t, 0);
  for (int i = 0; i < 3; ++i) CHECK(cf.at(i, 0) == 2.0);
  for (int i = 3; i < 6; ++i) CHECK(cf.at(i, 0) == 20.0);
  // the other column is untouched, bit for bit
  for (int i = 0; i < 6; ++i) CHECK(cf.at(i, 1) == t.at(i, 1));

  // a constant column is its own median
  const auto cf2 = counterfactual_table(cf, 0);
  CHECK(cf2.values == cf.values);

  try {
    counterfactual_table(t, 2);
    FAIL("expected IndexOutOfRange");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::IndexOutOfRange);
  }
}

TEST_CASE("attribute recovers planted culprits under the negative rule", "[attribution]") {
  auto p = make_pipeline(42);
  AttributionOptions opt;
  opt.direction = Direction::Negative;  // median replacement lowers the culprit's score
  const auto attr = attribute(p.model, p.table, p.baseline, p.flags, opt);

  CHECK(attr.scoring_passes == p.table.features());
  REQUIRE(attr.size() == p.baseline.size());

  std::size_t hits = 0, true_flagged = 0;
  const int T = p.model.T;
  for (std::size_t w = 0; w < attr.size(); ++w) {
    const std::size_t row = w + T - 1;  // window origin
    if (!p.flags.flags[w] || !p.truth.flag[row]) continue;
    ++true_flagged;
    if (attr.winners[w] &&
        p.truth.culprits[row].front() == attr.feature_names[*attr.winners[w]]) {
      ++hits;
    }
  }
  REQUIRE(true_flagged >= 3);
  INFO("hits " << hits << " of " << true_flagged);
  CHECK(static_cast<double>(hits) >= 0.8 * static_cast<double>(true_flagged));

  // winner dominance within the exceedance set
  for (std::size_t w = 0; w < attr.size(); ++w) {
    if (!attr.winners[w]) continue;
    const double best = -attr.delta_at(w, *attr.winners[w]);
    for (int f : attr.exceedance_sets[w]) {
      CHECK(best >= -attr.delta_at(w, f) - 1e-15);
    }
  }

  // unflagged timestamps carry no winner and empty sets
  for (std::size_t w = 0; w < attr.size(); ++w) {
    if (!p.flags.flags[w]) {
      CHECK_FALSE(attr.winners[w].has_value());
      CHECK(attr.exceedance_sets[w].empty());
    }
  }
}

TEST_CASE("identity counterfactuals give zero deltas and empty sets", "[attribution]") {
  // every column is constant within each year, so each counterfactual table
  // is bit-identical to the original
  const std::vector<std::string> names{"a", "b", "c", "d"};
  TimeTable t;
  t.feature_names = names;
  t.units.assign(4, "");
  for (int y = 0; y < 2; ++y) {
    const auto t0 = parse_iso8601(y == 0 ? "2001-06-01" : "2002-06-01");
    for (int i = 0; i < 30; ++i) {
      t.timestamps.push_back(t0 + i * kSecondsPerDay);
      for (int f = 0; f < 4; ++f) t.values.push_back(y * 10.0 + f);
    }
  }
  auto model = build_model(halves(names), names,
                           {.T = 5, .encoder_width = 8, .latent_dim = 2, .seed = 3});
  const auto ws = window(t, 5);
  const auto baseline = score_series(model, ws);

  ThresholdSeries flags;
  flags.timestamps = baseline.timestamps;
  flags.scores = baseline.scores;
  flags.thresholds.assign(baseline.size(), 0.0);
  flags.flags.assign(baseline.size(), true);  // force attribution everywhere

  const auto attr = attribute(model, t, baseline, flags);
  for (std::size_t w = 0; w < attr.size(); ++w) {
    for (std::size_t f = 0; f < 4; ++f) {
      REQUIRE(std::abs(attr.delta_at(w, f)) <= 1e-9);  // exactly zero in fact
    }
    // delta 0 never qualifies: F_t stays empty, recorded as unattributed
    CHECK(attr.exceedance_sets[w].empty());
    CHECK_FALSE(attr.winners[w].has_value());
  }
}

TEST_CASE("attribute is equivariant under consistent permutations", "[attribution]") {
  auto p = make_pipeline(7);
  AttributionOptions opt;
  opt.direction = Direction::Negative;
  const auto base = attribute(p.model, p.table, p.baseline, p.flags, opt);

  // swap the two features of cluster 0 in table and model alike
  TimeTable swapped = p.table;
  std::swap(swapped.feature_names[0], swapped.feature_names[1]);
  for (std::size_t r = 0; r < swapped.rows(); ++r) {
    std::swap(swapped.at(r, 0), swapped.at(r, 1));
  }
  ModelCheckpoint pm = p.model;
  pm.feature_names = swapped.feature_names;
  Matrix& W = pm.params.at("enc0.W");
  for (int row = 0; row < W.rows; ++row) std::swap(W(row, 0), W(row, 1));
  Matrix& outW = pm.params.at("out.W");
  for (int col = 0; col < outW.cols; ++col) std::swap(outW(0, col), outW(1, col));
  std::swap(pm.params.at("out.b").data[0], pm.params.at("out.b").data[1]);

  const auto perm = attribute(pm, swapped, p.baseline, p.flags, opt);
  for (std::size_t w = 0; w < base.size(); ++w) {
    CHECK(perm.delta_at(w, 0) == Catch::Approx(base.delta_at(w, 1)).margin(1e-9));
    CHECK(perm.delta_at(w, 1) == Catch::Approx(base.delta_at(w, 0)).margin(1e-9));
    REQUIRE(base.winners[w].has_value() == perm.winners[w].has_value());
    if (base.winners[w]) {
      CHECK(base.feature_names[*base.winners[w]] == perm.feature_names[*perm.winners[w]]);
    }
  }
}

TEST_CASE("attribute validates alignment", "[attribution]") {
  auto p = make_pipeline(9);
  ScoreSeries wrong = p.baseline;
  wrong.scores.pop_back();
  wrong.timestamps.pop_back();
  try {
    attribute(p.model, p.table, wrong, p.flags);
    FAIL("expected ModelDataMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ModelDataMismatch);
  }
}

TEST_CASE("parallel attribution matches single-threaded", "[attribution]") {
  auto p = make_pipeline(11);
  AttributionOptions serial;
  serial.direction = Direction::Negative;
  AttributionOptions parallel = serial;
  parallel.jobs = 4;
  const auto a = attribute(p.model, p.table, p.baseline, p.flags, serial);
  const auto b = attribute(p.model, p.table, p.baseline, p.flags, parallel);
  CHECK(a.delta == b.delta);
  for (std::size_t w = 0; w < a.size(); ++w) REQUIRE(a.winners[w] == b.winners[w]);
}

TEST_CASE("rank_features counts winners", "[attribution]") {
  AttributionSeries attr;
  attr.feature_names = {"a", "b"};
  attr.timestamps = {0, 1, 2};
  attr.delta.assign(6, 0.0);
  attr.exceedance_sets.resize(3);
  attr.winners = {0, 0, 1};
  const auto ranked = rank_features(attr, 1);
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0].name == "a");
  CHECK(ranked[0].count == 2.0);
  CHECK(ranked[1].name == "b");
  CHECK(ranked[1].count == 1.0);
}

TEST_CASE("rank frequencies divide by the grid count", "[attribution]") {
  const auto ranked = rank_from_counts({{"a", 10.0}, {"b", 5.0}}, 2);
  CHECK(ranked[0].frequency == 5.0);
  CHECK(ranked[1].frequency == 2.5);
}

TEST_CASE("rank frequency reproduces the published normalization", "[attribution]") {
  // 6676 attributed anomalies over 924 grids
  const auto ranked = rank_from_counts({{"ssrd", 6676.0}}, 924);
  CHECK(ranked[0].frequency == Catch::Approx(7.2251).margin(1e-4));
}

TEST_CASE("topk takes a prefix", "[attribution]") {
  RankedFeatures r{{"a", 5, 5}, {"b", 3, 3}, {"c", 1, 1}};
  CHECK(topk(r, 3).size() == 3);
  CHECK(topk(r, 1)[0].name == "a");
  const auto two = topk(r, 2);
  REQUIRE(two.size() == 2);
  CHECK(two[0].name == "a");
  CHECK(two[1].name == "b");
  try {
    topk(r, 4);
    FAIL("expected KOutOfRange");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::KOutOfRange);
  }
}

TEST_CASE("attribution CSV and ranking JSON round-trip", "[attribution]") {
  auto p = make_pipeline(13);
  AttributionOptions opt;
  opt.direction = Direction::Negative;
  const auto attr = attribute(p.model, p.table, p.baseline, p.flags, opt);

  testutil::TempDir tmp("attr");
  save_attribution(attr, tmp.path("a.csv"));
  const auto back = load_attribution(tmp.path("a.csv"));
  CHECK(back.timestamps == attr.timestamps);
  CHECK(back.feature_names == attr.feature_names);
  CHECK(back.delta == attr.delta);
  for (std::size_t w = 0; w < attr.size(); ++w) REQUIRE(back.winners[w] == attr.winners[w]);

  const auto ranked = rank_features(attr, 1);
  save_ranking(ranked, tmp.path("r.json"));
  const auto ranked_back = load_ranking(tmp.path("r.json"));
  REQUIRE(ranked_back.size() == ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    CHECK(ranked_back[i].name == ranked[i].name);
    CHECK(ranked_back[i].count == ranked[i].count);
  }

  // external rankings arrive as a bare array of names
  testutil::write_file(tmp.path("ext.json"), R"(["f3","f1","f2"])");
  const auto ext = load_ranking(tmp.path("ext.json"));
  REQUIRE(ext.size() == 3);
  CHECK(ext[0].name == "f3");
}
