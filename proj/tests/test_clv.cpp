#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "anomattr/clv.hpp"
#include "anomattr/synth.hpp"
#include "helpers.hpp"

using namespace anomattr;
using testutil::daily_table;

namespace {

ClusterAssignment pair_assignment(const std::vector<std::string>& names, int k) {
  ClusterAssignment a;
  a.k = k;
  a.names = names;
  const std::size_t per = (names.size() + k - 1) / k;
  for (std::size_t i = 0; i < names.size(); ++i)
    a.cluster_of.push_back(static_cast<int>(i / per));
  return a;
}

}  // namespace

TEST_CASE("build_model shapes", "[clv]") {
  const std::vector<std::string> names{"a", "b", "c", "d"};

  // k = 1 degenerates to a plain LSTM-VAE over all features
  auto single = build_model(pair_assignment(names, 1), names, {.T = 6, .encoder_width = 8, .latent_dim = 3});
  CHECK(single.k == 1);
  CHECK(single.params.at("enc0.W").cols == 4);
  CHECK(single.params.at("dec.W").cols == 3);

  // k = F: one-feature encoders, decoder input F * latent_dim
  ClusterAssignment each;
  each.k = 4;
  each.names = names;
  each.cluster_of = {0, 1, 2, 3};
  auto full = build_model(each, names, {.T = 6, .encoder_width = 8, .latent_dim = 3});
  CHECK(full.params.at("enc3.W").cols == 1);
  CHECK(full.params.at("dec.W").cols == 12);
  CHECK(full.params.at("out.W").rows == 4);

  // seed-equal builds are parameter-identical
  auto again = build_model(each, names, {.T = 6, .encoder_width = 8, .latent_dim = 3});
  for (const auto& [name, p] : full.params) {
    REQUIRE(again.params.at(name).data == p.data);
  }

  // an id in [0, k) with no members is an error
  ClusterAssignment gap;
  gap.k = 3;
  gap.names = names;
  gap.cluster_of = {0, 0, 2, 2};
  try {
    build_model(gap, names, {});
    FAIL("expected EmptyCluster");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyCluster);
  }
}

TEST_CASE("training on constant windows approaches the nll floor", "[clv]") {
  const std::vector<std::string> names{"a", "b"};
  auto table = daily_table("2001-01-01", 40, names, [](int, int) { return 0.7; });
  const auto ws = window(table, 4);
  auto model = build_model(pair_assignment(names, 1), names,
                           {.T = 4, .encoder_width = 8, .latent_dim = 2, .seed = 1});
  const auto result = train(model, ws,
                            {.epochs = 80, .patience = 80, .batch = 8, .lr = 0.05,
                             .val_fraction = 0.2, .seed = 1});

  const double floor = 0.5 * kLog2Pi * 4 * 2;  // d/2 log(2 pi), d = T*F
  const double final_loss = result.history.back().train;
  CHECK(final_loss < floor * 1.1);
  CHECK(final_loss > floor - 1e-6);  // the floor is a true lower bound
  CHECK(result.history.front().train > final_loss);

  // reconstruction error itself goes to ~0
  std::vector<std::size_t> all(ws.count());
  std::iota(all.begin(), all.end(), 0);
  const auto parts = score_windows_detail(result.model, ws, all);
  CHECK(mean(parts.nll) < floor + 0.3);
}

TEST_CASE("patience zero trains exactly one epoch", "[clv]") {
  const std::vector<std::string> names{"a", "b"};
  auto table = daily_table("2001-01-01", 30, names, [](int r, int f) { return std::sin(r + f); });
  const auto ws = window(table, 4);
  auto model = build_model(pair_assignment(names, 1), names,
                           {.T = 4, .encoder_width = 4, .latent_dim = 2});
  const auto result = train(model, ws, {.epochs = 50, .patience = 0, .batch = 8, .seed = 3});
  CHECK(result.history.size() == 1);
}

TEST_CASE("a diverging run reports the offending batch", "[clv]") {
  const std::vector<std::string> names{"a", "b"};
  auto table = daily_table("2001-01-01", 60, names,
                           [](int r, int f) { return std::sin(0.5 * r) + f; });
  const auto ws = window(table, 4);
  auto model = build_model(pair_assignment(names, 1), names,
                           {.T = 4, .encoder_width = 6, .latent_dim = 2, .seed = 2});
  try {
    train(model, ws, {.epochs = 30, .patience = 30, .batch = 8, .lr = 1e14, .seed = 2});
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFiniteLoss);
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("training is seed-deterministic", "[clv]") {
  const std::vector<std::string> names{"a", "b", "c"};
  auto table = daily_table("2001-01-01", 40, names,
                           [](int r, int f) { return std::sin(0.3 * r + f) + 0.1 * f; });
  const auto ws = window(table, 5);
  auto model = build_model(pair_assignment(names, 2), names,
                           {.T = 5, .encoder_width = 6, .latent_dim = 2, .seed = 9});
  const TrainOptions opt{.epochs = 4, .patience = 4, .batch = 8, .lr = 1e-3,
                         .val_fraction = 0.25, .seed = 17};
  const auto r1 = train(model, ws, opt);
  const auto r2 = train(model, ws, opt);
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t e = 0; e < r1.history.size(); ++e) {
    CHECK(r1.history[e].train == r2.history[e].train);
    CHECK(r1.history[e].val == r2.history[e].val);
  }
  for (const auto& [name, p] : r1.model.params) {
    REQUIRE(r2.model.params.at(name).data == p.data);
  }
}

TEST_CASE("scores are stable, aligned and spike-sensitive", "[clv]") {
  SynthConfig cfg;
  cfg.features = 4;
  cfg.length = 220;
  cfg.blocks = {{0, 1}, {2, 3}};
  cfg.anomaly_rate = 0.0;
  cfg.seed = 21;
  auto [table, gt] = generate(cfg);
  const auto z = zscore(table);
  const auto ws = window(z.table, 8);

  ClusterAssignment assign = pair_assignment(table.feature_names, 2);
  auto model = build_model(assign, table.feature_names,
                           {.T = 8, .encoder_width = 16, .latent_dim = 2, .seed = 5});
  const auto result = train(model, ws,
                            {.epochs = 15, .patience = 15, .batch = 32, .lr = 3e-3,
                             .val_fraction = 0.2, .seed = 5});

  const auto s = score_series(result.model, ws);
  REQUIRE(s.size() == ws.count());
  CHECK(s.timestamps == ws.origin_timestamps);
  for (std::size_t i = 1; i < s.timestamps.size(); ++i) {
    CHECK(s.timestamps[i] > s.timestamps[i - 1]);  // injective mapping
  }

  // pure function: bit-stable on repeated calls
  const auto s2 = score_series(result.model, ws);
  CHECK(s.scores == s2.scores);

  // scoring the training data concentrates near the loss floor
  std::vector<double> sorted = s.scores;
  std::sort(sorted.begin(), sorted.end());
  const double med = quantile_sorted(sorted, 0.5);
  const double p95 = quantile_sorted(sorted, 0.95);
  CHECK(p95 < 2.0 * med);

  // a window with one feature spiked to +8 sigma scores strictly above the
  // clean version of the same window
  TimeTable spiked = inject(z.table, 100, "f2", 8.0);
  const auto wspike = window(spiked, 8);
  const std::size_t widx = 100 - 7;  // window ending at row 100
  const auto clean_score = score_windows(result.model, ws, {widx});
  const auto spike_score = score_windows(result.model, wspike, {widx});
  CHECK(spike_score[0] > clean_score[0]);

  // identical windows receive identical scores
  const auto repeat = score_windows(result.model, ws, {widx, widx});
  CHECK(repeat[0] == repeat[1]);
}

TEST_CASE("scores are invariant to consistent permutations", "[clv]") {
  const std::vector<std::string> names{"a", "b", "c", "d"};
  auto table = daily_table("2001-01-01", 60, names, [](int r, int f) {
    return std::sin(0.2 * r + 1.7 * f) + 0.05 * r * (f == 2);
  });
  ClusterAssignment assign = pair_assignment(names, 2);  // {a,b}, {c,d}
  auto model = build_model(assign, names, {.T = 6, .encoder_width = 8, .latent_dim = 2, .seed = 2});
  const auto base = score_series(model, window(table, 6));

  SECTION("swapping features within a cluster") {
    // table with a and b swapped
    TimeTable swapped = table;
    swapped.feature_names = {"b", "a", "c", "d"};
    for (std::size_t r = 0; r < table.rows(); ++r) {
      swapped.at(r, 0) = table.at(r, 1);
      swapped.at(r, 1) = table.at(r, 0);
    }
    // consistently permuted model: encoder input columns and output rows
    ModelCheckpoint pm = model;
    pm.feature_names = swapped.feature_names;
    Matrix& W = pm.params.at("enc0.W");
    for (int row = 0; row < W.rows; ++row) std::swap(W(row, 0), W(row, 1));
    Matrix& outW = pm.params.at("out.W");
    for (int col = 0; col < outW.cols; ++col) std::swap(outW(0, col), outW(1, col));
    std::swap(pm.params.at("out.b").data[0], pm.params.at("out.b").data[1]);

    const auto permuted = score_series(pm, window(swapped, 6));
    for (std::size_t i = 0; i < base.size(); ++i) {
      REQUIRE(permuted.scores[i] == Catch::Approx(base.scores[i]).epsilon(1e-12));
    }
  }

  SECTION("relabeling clusters") {
    ModelCheckpoint pm = model;
    for (int& c : pm.cluster_of) c = 1 - c;
    // swap encoder stacks
    for (const char* part : {"W", "U", "b", "mu.W", "mu.b", "lv.W", "lv.b"}) {
      std::swap(pm.params.at(detail::enc_name(0, part)), pm.params.at(detail::enc_name(1, part)));
    }
    // decoder consumes [z0 z1]; swap the latent blocks of dec.W's input
    Matrix& decW = pm.params.at("dec.W");
    const int L = model.latent_dim;
    for (int row = 0; row < decW.rows; ++row) {
      for (int i = 0; i < L; ++i) std::swap(decW(row, i), decW(row, L + i));
    }
    const auto relabeled = score_series(pm, window(table, 6));
    for (std::size_t i = 0; i < base.size(); ++i) {
      REQUIRE(relabeled.scores[i] == Catch::Approx(base.scores[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("score_series validates shapes", "[clv]") {
  const std::vector<std::string> names{"a", "b"};
  auto table = daily_table("2001-01-01", 30, names, [](int r, int f) { return r + f + 0.0; });
  auto model = build_model(pair_assignment(names, 1), names,
                           {.T = 6, .encoder_width = 4, .latent_dim = 2});
  try {
    score_series(model, window(table, 5));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("checkpoints round-trip through JSON", "[clv]") {
  const std::vector<std::string> names{"a", "b", "c"};
  auto model = build_model(pair_assignment(names, 2), names,
                           {.T = 5, .encoder_width = 6, .latent_dim = 2, .seed = 11});
  model.norm_stats.names = names;
  model.norm_stats.mean = {0.5, -1.0, 3.14159};
  model.norm_stats.stddev = {1.0, 2.0, 0.0};
  model.norm_stats.degenerate = {false, false, true};

  testutil::TempDir tmp("ckpt");
  save_checkpoint(model, tmp.path("m.json"));
  const auto back = load_checkpoint(tmp.path("m.json"));
  CHECK(back.T == model.T);
  CHECK(back.k == model.k);
  CHECK(back.feature_names == model.feature_names);
  CHECK(back.cluster_of == model.cluster_of);
  CHECK(back.norm_stats.mean == model.norm_stats.mean);
  for (const auto& [name, p] : model.params) {
    REQUIRE(back.params.at(name).data == p.data);  // exact double round-trip
  }

  // scores from the reloaded checkpoint are bit-identical
  auto table = daily_table("2001-01-01", 25, names, [](int r, int f) { return std::cos(r * 0.4 + f); });
  const auto ws = window(table, 5);
  CHECK(score_series(model, ws).scores == score_series(back, ws).scores);
}
