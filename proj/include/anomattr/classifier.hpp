#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "anomattr/attribution.hpp"
#include "anomattr/nn.hpp"
#include "anomattr/stats.hpp"
#include "anomattr/table.hpp"

namespace anomattr {

// Benchmark-style supervised classifier configuration: stacked LSTM 64/32/10,
// one dense output unit, dropout 0.2, Adam at 1e-3, weighted binary
// cross-entropy, batch 64, window 7, up to 50 epochs with patience 10.
struct ClassifierParams {
  std::vector<int> lstm_widths{64, 32, 10};
  double dropout = 0.2;
  double lr = 1e-3;
  int epochs = 50;
  int patience = 10;
  int batch = 64;
  int window = 7;
  double train_fraction = 0.7;
  double threshold = 0.5;
};

namespace detail {

inline Matrix gather_cls(const std::vector<std::vector<double>>& rows,
                         const std::vector<std::size_t>& wins, std::size_t begin, int B, int t,
                         int T) {
  const int k = static_cast<int>(rows[0].size()) / T;
  Matrix m(k, B);
  for (int j = 0; j < B; ++j) {
    const auto& w = rows[wins[begin + j]];
    for (int f = 0; f < k; ++f) m(f, j) = w[static_cast<std::size_t>(t) * k + f];
  }
  return m;
}

}  // namespace detail

// Trains the benchmark classifier on the chronologically first
// `train_fraction` of windows restricted to the top-k ranked features, with
// class weights inverse to class frequency (N / (2 * N_class)), and reports
// metrics on the held-out tail. Early stopping monitors the training loss.
inline MetricsReport classify_topk(const TimeTable& table, const std::vector<bool>& labels,
                                   const RankedFeatures& ranked, std::size_t k,
                                   const ClassifierParams& cfg, std::uint64_t seed) {
  require(labels.size() == table.rows(), ErrorKind::LengthMismatch,
          "labels are not aligned with the table");
  require(k >= 1 && k <= ranked.size(), ErrorKind::KOutOfRange, "k outside the ranking");
  require(cfg.window >= 1 && cfg.epochs >= 1 && cfg.batch >= 1, ErrorKind::InvalidConfig,
          "window, epochs and batch must be positive");
  require(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0, ErrorKind::InvalidConfig,
          "train_fraction must be in (0, 1)");

  std::vector<std::size_t> feat_cols;
  for (std::size_t i = 0; i < k; ++i) {
    if (!table.has_feature(ranked[i].name)) {
      fail(ErrorKind::UnknownFeatureInRanking,
           "ranked feature '" + ranked[i].name + "' not in the table");
    }
    feat_cols.push_back(table.feature_index(ranked[i].name));
  }
  const int kf = static_cast<int>(feat_cols.size());
  const int T = cfg.window;
  require(table.rows() >= static_cast<std::size_t>(T), ErrorKind::SeriesTooShort,
          "table shorter than the classifier window");

  // windows as flattened (t, f) rows; label = label of the last timestep
  const std::size_t n_win = table.rows() - T + 1;
  std::vector<std::vector<double>> rows(n_win);
  std::vector<bool> win_labels(n_win);
  for (std::size_t w = 0; w < n_win; ++w) {
    rows[w].resize(static_cast<std::size_t>(T) * kf);
    for (int t = 0; t < T; ++t) {
      for (int f = 0; f < kf; ++f) {
        rows[w][static_cast<std::size_t>(t) * kf + f] = table.at(w + t, feat_cols[f]);
      }
    }
    win_labels[w] = labels[w + T - 1];
  }

  const auto n_train = static_cast<std::size_t>(cfg.train_fraction * static_cast<double>(n_win));
  require(n_train >= 1 && n_train < n_win, ErrorKind::SeriesTooShort,
          "split leaves an empty train or test set");

  std::size_t train_pos = 0;
  for (std::size_t w = 0; w < n_train; ++w) train_pos += win_labels[w];
  require(train_pos > 0 && train_pos < n_train, ErrorKind::SingleClassTraining,
          "training split holds a single class");
  const double w_pos = static_cast<double>(n_train) / (2.0 * static_cast<double>(train_pos));
  const double w_neg =
      static_cast<double>(n_train) / (2.0 * static_cast<double>(n_train - train_pos));

  // stacked LSTM + relu + dropout + dense(1)
  Rng rng(seed);
  Params params;
  int in_dim = kf;
  for (std::size_t layer = 0; layer < cfg.lstm_widths.size(); ++layer) {
    LstmParams p = init_lstm(in_dim, cfg.lstm_widths[layer], rng);
    const std::string pre = "lstm" + std::to_string(layer) + ".";
    params[pre + "W"] = std::move(p.W);
    params[pre + "U"] = std::move(p.U);
    params[pre + "b"] = std::move(p.b);
    in_dim = cfg.lstm_widths[layer];
  }
  params["head.W"] = glorot_uniform(1, in_dim, rng);
  params["head.b"] = Matrix(1, 1);

  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  AdamState adam;
  Params best_params = params;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  const int top_width = cfg.lstm_widths.back();
  const double keep = 1.0 - cfg.dropout;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < n_train; begin += cfg.batch) {
      const int B = static_cast<int>(std::min<std::size_t>(cfg.batch, n_train - begin));
      Graph g;
      ParamVars vars;
      for (const auto& [name, p] : params) vars[name] = g.param(p);

      std::vector<Var> xs;
      xs.reserve(T);
      for (int t = 0; t < T; ++t) {
        xs.push_back(g.constant(detail::gather_cls(rows, order, begin, B, t, T)));
      }
      for (std::size_t layer = 0; layer < cfg.lstm_widths.size(); ++layer) {
        const std::string pre = "lstm" + std::to_string(layer) + ".";
        LstmVars lv{vars.at(pre + "W"), vars.at(pre + "U"), vars.at(pre + "b")};
        xs = lstm_unroll(g, lv, xs, cfg.lstm_widths[layer]);
      }
      Var h = g.relu_op(xs.back());
      if (cfg.dropout > 0.0) {
        Matrix mask(top_width, B);
        for (double& x : mask.data) x = rng.uniform() < keep ? 1.0 / keep : 0.0;
        h = g.mul(h, g.constant(std::move(mask)));
      }
      Var logit = g.add_bias(g.matmul(vars.at("head.W"), h), vars.at("head.b"));

      Matrix targets(1, B), weights(1, B);
      for (int j = 0; j < B; ++j) {
        const bool y = win_labels[order[begin + j]];
        targets(0, j) = y ? 1.0 : 0.0;
        weights(0, j) = y ? w_pos : w_neg;
      }
      Var loss = g.scale(g.bce_with_logits(logit, targets, weights), 1.0 / B);
      const double value = g.scalar(loss);
      if (!std::isfinite(value)) {
        fail(ErrorKind::NonFiniteLoss, "non-finite classifier loss in epoch " + std::to_string(epoch));
      }
      g.backward(loss);
      Params grads;
      for (const auto& [name, v] : vars) grads.emplace(name, g.grad(v));
      adam_step(params, grads, adam, cfg.lr);
      epoch_loss += value * B;
      seen += B;
    }
    epoch_loss /= static_cast<double>(seen);
    if (epoch_loss < best_loss) {
      best_loss = epoch_loss;
      best_params = params;
      best_epoch = epoch;
    }
    if (epoch - best_epoch >= cfg.patience) break;
  }

  // evaluate on the held-out tail (dropout off)
  std::vector<std::size_t> test_ids(n_win - n_train);
  std::iota(test_ids.begin(), test_ids.end(), n_train);
  std::vector<double> probs(test_ids.size());
  std::vector<bool> test_labels(test_ids.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < test_ids.size(); begin += kChunk) {
    const int B = static_cast<int>(std::min(kChunk, test_ids.size() - begin));
    std::vector<Matrix> xs;
    xs.reserve(T);
    for (int t = 0; t < T; ++t) xs.push_back(detail::gather_cls(rows, test_ids, begin, B, t, T));
    for (std::size_t layer = 0; layer < cfg.lstm_widths.size(); ++layer) {
      const std::string pre = "lstm" + std::to_string(layer) + ".";
      const LstmParams lp{best_params.at(pre + "W"), best_params.at(pre + "U"),
                          best_params.at(pre + "b")};
      xs = lstm_forward(lp, xs).hidden;
    }
    Matrix h = apply_activation(xs.back(), Activation::Relu);
    Matrix prob = dense_forward(best_params.at("head.W"), best_params.at("head.b"), h,
                                Activation::Sigmoid);
    for (int j = 0; j < B; ++j) {
      probs[begin + j] = prob(0, j);
      test_labels[begin + j] = win_labels[test_ids[begin + j]];
    }
  }
  return metrics(probs, test_labels, cfg.threshold);
}

// Runs classify_topk for our ranking and each external ranking under the same
// seed and configuration.
inline std::vector<std::pair<std::string, MetricsReport>> compare_rankings(
    const RankedFeatures& ours, const std::vector<std::pair<std::string, RankedFeatures>>& external,
    std::size_t k, const TimeTable& table, const std::vector<bool>& labels,
    const ClassifierParams& cfg, std::uint64_t seed) {
  std::vector<std::pair<std::string, MetricsReport>> out;
  out.emplace_back("ours", classify_topk(table, labels, ours, k, cfg, seed));
  for (const auto& [name, ranking] : external) {
    for (const auto& f : ranking) {
      if (!table.has_feature(f.name)) {
        fail(ErrorKind::UnknownFeatureInRanking,
             "ranking '" + name + "' names unknown feature '" + f.name + "'");
      }
    }
    out.emplace_back(name, classify_topk(table, labels, ranking, k, cfg, seed));
  }
  return out;
}

inline void save_metrics_report(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << "method,precision,recall,f1,pr_auc,roc_auc\n";
  for (const auto& [name, m] : rows) {
    out << name << ',' << format_double(m.precision) << ',' << format_double(m.recall) << ','
        << format_double(m.f1) << ',' << format_double(m.pr_auc) << ','
        << format_double(m.roc_auc) << '\n';
  }
}

}  // namespace anomattr
