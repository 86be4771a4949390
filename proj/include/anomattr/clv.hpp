#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "anomattr/clustering.hpp"
#include "anomattr/nn.hpp"
#include "anomattr/preprocess.hpp"
#include "anomattr/table.hpp"

namespace anomattr {

constexpr double kLog2Pi = 1.8378770664093454836;

struct ClvConfig {
  int T = 14;
  int encoder_width = 32;
  int latent_dim = 4;  // per cluster
  std::uint64_t seed = 0;
};

// One LSTM encoder per feature cluster, per-cluster Gaussian latent heads,
// and a shared LSTM decoder fed the concatenated latent tiled across T steps.
struct ModelCheckpoint {
  int T = 14;
  int encoder_width = 32;
  int latent_dim = 4;
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> feature_names;  // column order the model consumes
  std::vector<int> cluster_of;             // parallel to feature_names
  NormStats norm_stats;                    // stats used to normalize the training data
  Params params;

  std::vector<std::vector<int>> cluster_columns() const {
    std::vector<std::vector<int>> cols(k);
    for (std::size_t i = 0; i < cluster_of.size(); ++i)
      cols[cluster_of[i]].push_back(static_cast<int>(i));
    return cols;
  }

  int latent_total() const { return k * latent_dim; }
};

struct ScoreSeries {
  std::vector<std::int64_t> timestamps;
  std::vector<double> scores;

  std::size_t size() const { return scores.size(); }
};

namespace detail {

inline std::string enc_name(int c, const char* part) {
  return "enc" + std::to_string(c) + "." + part;
}

// Gathers feature rows `cols` of the batch at timestep t into |cols| x B.
inline Matrix gather_step(const WindowSet& ws, const std::vector<std::size_t>& wins,
                          std::size_t begin, int B, int t, const std::vector<int>& cols) {
  Matrix m(static_cast<int>(cols.size()), B);
  const std::size_t F = ws.features();
  for (int j = 0; j < B; ++j) {
    const std::size_t w = wins[begin + j];
    const double* row = &ws.data[(w * ws.T + t) * F];
    for (std::size_t i = 0; i < cols.size(); ++i) m(static_cast<int>(i), j) = row[cols[i]];
  }
  return m;
}

}  // namespace detail

inline ModelCheckpoint build_model(const ClusterAssignment& assignment,
                                   const std::vector<std::string>& ordered_features,
                                   const ClvConfig& cfg) {
  require(!ordered_features.empty(), ErrorKind::EmptyInput, "no features");
  require(cfg.T >= 1 && cfg.encoder_width >= 1 && cfg.latent_dim >= 1, ErrorKind::InvalidConfig,
          "model dimensions must be positive");

  ModelCheckpoint m;
  m.T = cfg.T;
  m.encoder_width = cfg.encoder_width;
  m.latent_dim = cfg.latent_dim;
  m.k = assignment.k;
  m.seed = cfg.seed;
  m.feature_names = ordered_features;
  m.cluster_of.reserve(ordered_features.size());
  for (const auto& name : ordered_features) m.cluster_of.push_back(assignment.cluster(name));

  const auto cols = m.cluster_columns();
  for (int c = 0; c < m.k; ++c) {
    require(!cols[c].empty(), ErrorKind::EmptyCluster,
            "cluster " + std::to_string(c) + " has no features");
  }

  Rng rng(cfg.seed);
  const int H = cfg.encoder_width;
  const int L = cfg.latent_dim;
  for (int c = 0; c < m.k; ++c) {
    LstmParams enc = init_lstm(static_cast<int>(cols[c].size()), H, rng);
    m.params[detail::enc_name(c, "W")] = std::move(enc.W);
    m.params[detail::enc_name(c, "U")] = std::move(enc.U);
    m.params[detail::enc_name(c, "b")] = std::move(enc.b);
    m.params[detail::enc_name(c, "mu.W")] = glorot_uniform(L, H, rng);
    m.params[detail::enc_name(c, "mu.b")] = Matrix(L, 1);
    m.params[detail::enc_name(c, "lv.W")] = glorot_uniform(L, H, rng);
    m.params[detail::enc_name(c, "lv.b")] = Matrix(L, 1);
  }
  const int F = static_cast<int>(ordered_features.size());
  LstmParams dec = init_lstm(m.latent_total(), H, rng);
  m.params["dec.W"] = std::move(dec.W);
  m.params["dec.U"] = std::move(dec.U);
  m.params["dec.b"] = std::move(dec.b);
  m.params["out.W"] = glorot_uniform(F, H, rng);
  m.params["out.b"] = Matrix(F, 1);
  return m;
}

struct ScoreBreakdown {
  std::vector<double> total;
  std::vector<double> kl;
  std::vector<double> nll;
};

// Noise-free scores (posterior mean) for the selected windows, in their order.
inline ScoreBreakdown score_windows_detail(const ModelCheckpoint& m, const WindowSet& ws,
                                           const std::vector<std::size_t>& wins) {
  require(ws.feature_names == m.feature_names, ErrorKind::ShapeMismatch,
          "window features do not match the checkpoint");
  require(ws.T == m.T, ErrorKind::ShapeMismatch, "window length does not match the checkpoint");

  const auto cols = m.cluster_columns();
  const int H = m.encoder_width;
  const int L = m.latent_dim;
  const int F = static_cast<int>(m.feature_names.size());
  const LstmParams dec{m.params.at("dec.W"), m.params.at("dec.U"), m.params.at("dec.b")};
  const Matrix& outW = m.params.at("out.W");
  const Matrix& outb = m.params.at("out.b");

  ScoreBreakdown out;
  out.total.resize(wins.size());
  out.kl.resize(wins.size());
  out.nll.resize(wins.size());

  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < wins.size(); begin += kChunk) {
    const int B = static_cast<int>(std::min(kChunk, wins.size() - begin));

    Matrix z(m.latent_total(), B);
    std::vector<double> kl(B, 0.0);
    for (int c = 0; c < m.k; ++c) {
      const LstmParams enc{m.params.at(detail::enc_name(c, "W")),
                           m.params.at(detail::enc_name(c, "U")),
                           m.params.at(detail::enc_name(c, "b"))};
      LstmState st{Matrix(H, B), Matrix(H, B)};
      for (int t = 0; t < m.T; ++t) {
        st = lstm_step(enc, detail::gather_step(ws, wins, begin, B, t, cols[c]), st);
      }
      const Matrix mu = dense_forward(m.params.at(detail::enc_name(c, "mu.W")),
                                      m.params.at(detail::enc_name(c, "mu.b")), st.h,
                                      Activation::Identity);
      const Matrix lv = dense_forward(m.params.at(detail::enc_name(c, "lv.W")),
                                      m.params.at(detail::enc_name(c, "lv.b")), st.h,
                                      Activation::Identity);
      for (int i = 0; i < L; ++i) {
        for (int j = 0; j < B; ++j) {
          kl[j] += 0.5 * (mu(i, j) * mu(i, j) + std::exp(lv(i, j)) - 1.0 - lv(i, j));
          z(c * L + i, j) = mu(i, j);  // posterior mean
        }
      }
    }

    std::vector<double> nll(B, 0.5 * kLog2Pi * m.T * F);
    LstmState dst{Matrix(H, B), Matrix(H, B)};
    for (int t = 0; t < m.T; ++t) {
      dst = lstm_step(dec, z, dst);
      const Matrix recon = dense_forward(outW, outb, dst.h, Activation::Identity);
      for (int j = 0; j < B; ++j) {
        const std::size_t w = wins[begin + j];
        const double* row = &ws.data[(w * ws.T + t) * F];
        double s = 0.0;
        for (int f = 0; f < F; ++f) {
          const double d = row[f] - recon(f, j);
          s += d * d;
        }
        nll[j] += 0.5 * s;
      }
    }

    for (int j = 0; j < B; ++j) {
      out.kl[begin + j] = kl[j];
      out.nll[begin + j] = nll[j];
      out.total[begin + j] = kl[j] + nll[j];
    }
  }
  return out;
}

inline std::vector<double> score_windows(const ModelCheckpoint& m, const WindowSet& ws,
                                         const std::vector<std::size_t>& wins) {
  return score_windows_detail(m, ws, wins).total;
}

// Per-window anomaly score (kl + nll at the posterior mean), anchored to the
// window's last timestep.
inline ScoreSeries score_series(const ModelCheckpoint& m, const WindowSet& ws) {
  std::vector<std::size_t> all(ws.count());
  std::iota(all.begin(), all.end(), 0);
  ScoreSeries s;
  s.timestamps = ws.origin_timestamps;
  s.scores = score_windows(m, ws, all);
  return s;
}

struct TrainOptions {
  int epochs = 50;
  int patience = 10;
  int batch = 64;
  double lr = 1e-3;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct EpochLoss {
  double train = 0.0;
  double val = 0.0;
};

struct TrainResult {
  ModelCheckpoint model;
  std::vector<EpochLoss> history;
};

namespace detail {

// Builds the batched negative-ELBO graph for one training batch and returns
// the mean per-window loss. Noise is one N(0,1) draw per latent coordinate.
inline Var clv_batch_loss(Graph& g, const ParamVars& vars, const ModelCheckpoint& m,
                          const WindowSet& ws, const std::vector<std::size_t>& wins,
                          std::size_t begin, int B, Rng& rng) {
  const auto cols = m.cluster_columns();
  const int F = static_cast<int>(m.feature_names.size());
  const int Z = m.latent_total();

  std::vector<Var> mus, lvs;
  for (int c = 0; c < m.k; ++c) {
    std::vector<Var> xs;
    xs.reserve(m.T);
    for (int t = 0; t < m.T; ++t) {
      xs.push_back(g.constant(gather_step(ws, wins, begin, B, t, cols[c])));
    }
    LstmVars enc{vars.at(enc_name(c, "W")), vars.at(enc_name(c, "U")), vars.at(enc_name(c, "b"))};
    Var h = lstm_unroll(g, enc, xs, m.encoder_width).back();
    mus.push_back(g.add_bias(g.matmul(vars.at(enc_name(c, "mu.W")), h), vars.at(enc_name(c, "mu.b"))));
    lvs.push_back(g.add_bias(g.matmul(vars.at(enc_name(c, "lv.W")), h), vars.at(enc_name(c, "lv.b"))));
  }
  Var mu = m.k == 1 ? mus[0] : g.concat_rows(mus);
  Var lv = m.k == 1 ? lvs[0] : g.concat_rows(lvs);

  // kl = 1/2 (sum(mu^2 + exp(lv) - lv) - Z*B)
  Var klsum = g.sum_all(g.add(g.mul(mu, mu), g.sub(g.exp_op(lv), lv)));
  Var kl = g.scale(g.add_scalar(klsum, -static_cast<double>(Z) * B), 0.5);

  Matrix noise(Z, B);
  for (double& x : noise.data) x = rng.normal();
  Var z = g.add(mu, g.mul(g.exp_op(g.scale(lv, 0.5)), g.constant(std::move(noise))));

  LstmVars dec{vars.at("dec.W"), vars.at("dec.U"), vars.at("dec.b")};
  std::vector<Var> dec_hs = lstm_unroll(g, dec, std::vector<Var>(m.T, z), m.encoder_width);

  std::vector<int> all_cols(F);
  std::iota(all_cols.begin(), all_cols.end(), 0);
  Var sq_sum{-1};
  bool first = true;
  for (int t = 0; t < m.T; ++t) {
    Var recon = g.add_bias(g.matmul(vars.at("out.W"), dec_hs[t]), vars.at("out.b"));
    Var diff = g.sub(g.constant(gather_step(ws, wins, begin, B, t, all_cols)), recon);
    Var s = g.sum_all(g.mul(diff, diff));
    sq_sum = first ? s : g.add(sq_sum, s);
    first = false;
  }
  Var nll = g.scale(g.add_scalar(sq_sum, kLog2Pi * m.T * F * B), 0.5);

  return g.scale(g.add(kl, nll), 1.0 / B);
}

}  // namespace detail

// Minimizes the mean negative ELBO with Adam; early-stops when the
// (noise-free) validation loss has not improved for `patience` epochs and
// returns the best-validation checkpoint. The validation split is the
// chronologically last val_fraction of the windows.
inline TrainResult train(const ModelCheckpoint& model, const WindowSet& ws,
                         const TrainOptions& opt) {
  require(opt.val_fraction > 0.0 && opt.val_fraction <= 0.5, ErrorKind::InvalidConfig,
          "val_fraction must be in (0, 0.5]");
  require(opt.epochs >= 1 && opt.batch >= 1 && opt.patience >= 0, ErrorKind::InvalidConfig,
          "epochs and batch must be positive, patience non-negative");
  require(ws.count() >= 2, ErrorKind::SeriesTooShort, "need at least 2 windows to train");

  const std::size_t n_val =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                   opt.val_fraction * static_cast<double>(ws.count()))));
  const std::size_t n_train = ws.count() - n_val;
  require(n_train >= 1, ErrorKind::SeriesTooShort, "validation split leaves no training windows");

  std::vector<std::size_t> train_ids(n_train);
  std::iota(train_ids.begin(), train_ids.end(), 0);
  std::vector<std::size_t> val_ids(n_val);
  std::iota(val_ids.begin(), val_ids.end(), n_train);

  TrainResult result;
  result.model = model;
  Params& params = result.model.params;
  AdamState adam;
  Rng rng(opt.seed);

  ModelCheckpoint best = result.model;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(train_ids);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    int batch_index = 0;
    for (std::size_t begin = 0; begin < n_train; begin += opt.batch, ++batch_index) {
      const int B = static_cast<int>(std::min<std::size_t>(opt.batch, n_train - begin));
      Graph g;
      ParamVars vars;
      for (const auto& [name, p] : params) vars[name] = g.param(p);
      Var loss = detail::clv_batch_loss(g, vars, result.model, ws, train_ids, begin, B, rng);
      const double value = g.scalar(loss);
      if (!std::isfinite(value)) {
        fail(ErrorKind::NonFiniteLoss,
             "non-finite loss in batch " + std::to_string(batch_index) + " of epoch " +
                 std::to_string(epoch));
      }
      g.backward(loss);
      Params grads;
      for (const auto& [name, v] : vars) grads.emplace(name, g.grad(v));
      adam_step(params, grads, adam, opt.lr);
      epoch_loss += value * B;
      seen += B;
    }
    epoch_loss /= static_cast<double>(seen);

    const auto val_scores = score_windows(result.model, ws, val_ids);
    const double val_loss = mean(val_scores);
    if (!std::isfinite(val_loss)) {
      fail(ErrorKind::NonFiniteLoss, "non-finite validation loss in epoch " + std::to_string(epoch));
    }
    result.history.push_back(EpochLoss{epoch_loss, val_loss});

    if (val_loss < best_val) {
      best_val = val_loss;
      best = result.model;
      best_epoch = epoch;
    }
    if (epoch - best_epoch >= opt.patience) break;
  }

  result.model = std::move(best);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint and score-series serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json checkpoint_to_json(const ModelCheckpoint& m) {
  nlohmann::ordered_json j;
  j["format"] = "anomattr-checkpoint";
  j["version"] = 1;
  j["T"] = m.T;
  j["encoder_width"] = m.encoder_width;
  j["latent_dim"] = m.latent_dim;
  j["k"] = m.k;
  j["seed"] = m.seed;
  j["features"] = m.feature_names;
  j["cluster_of"] = m.cluster_of;
  j["norm_stats"] = m.norm_stats.empty() ? nlohmann::ordered_json() : norm_stats_to_json(m.norm_stats);
  auto params = nlohmann::ordered_json::object();
  for (const auto& [name, p] : m.params) {
    params[name] = {{"rows", p.rows}, {"cols", p.cols}, {"data", p.data}};
  }
  j["params"] = params;
  return j;
}

inline ModelCheckpoint checkpoint_from_json(const nlohmann::ordered_json& j) {
  require(j.value("format", "") == std::string("anomattr-checkpoint"),
          ErrorKind::InvalidConfig, "not an anomattr checkpoint");
  require(j.value("version", 0) == 1, ErrorKind::InvalidConfig, "unsupported checkpoint version");
  ModelCheckpoint m;
  m.T = j.at("T").get<int>();
  m.encoder_width = j.at("encoder_width").get<int>();
  m.latent_dim = j.at("latent_dim").get<int>();
  m.k = j.at("k").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.feature_names = j.at("features").get<std::vector<std::string>>();
  m.cluster_of = j.at("cluster_of").get<std::vector<int>>();
  if (!j.at("norm_stats").is_null()) m.norm_stats = norm_stats_from_json(j.at("norm_stats"));
  for (const auto& [name, pj] : j.at("params").items()) {
    Matrix p(pj.at("rows").get<int>(), pj.at("cols").get<int>());
    const auto data = pj.at("data").get<std::vector<double>>();
    require(data.size() == p.size(), ErrorKind::InvalidConfig,
            "checkpoint parameter '" + name + "' has wrong size");
    p.data = data;
    m.params[name] = std::move(p);
  }
  return m;
}

inline void save_checkpoint(const ModelCheckpoint& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << checkpoint_to_json(m).dump(1) << '\n';
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open '" + path + "'");
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::IoFailure, "cannot parse '" + path + "': " + e.what());
  }
  return checkpoint_from_json(j);
}

inline void save_scores(const ScoreSeries& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << "timestamp,score\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out << format_iso8601(s.timestamps[i]) << ',' << format_double(s.scores[i]) << '\n';
  }
}

inline ScoreSeries load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::IoFailure, "empty file '" + path + "'");
  ScoreSeries s;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 2) {
      fail(ErrorKind::IoFailure, path + ":" + std::to_string(lineno) + ": expected 2 fields");
    }
    s.timestamps.push_back(parse_iso8601(fields[0]));
    s.scores.push_back(parse_double(fields[1], path + ":" + std::to_string(lineno)));
  }
  return s;
}

}  // namespace anomattr
