// anomattr command-line interface: wires preprocessing, clustering, model
// training, scoring, POT thresholding, counterfactual attribution and the
// evaluation harness into subcommands with a shared JSON configuration.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "anomattr/anomattr.hpp"

namespace fs = std::filesystem;
using namespace anomattr;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// logging, controlled by ANOMATTR_LOG = error | warn | info | debug
// ---------------------------------------------------------------------------

int log_level() {
  static const int level = [] {
    const char* env = std::getenv("ANOMATTR_LOG");
    if (!env) return 1;
    const std::string v(env);
    if (v == "error") return 0;
    if (v == "warn") return 1;
    if (v == "info") return 2;
    if (v == "debug") return 3;
    return 1;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= 2) std::cerr << "[info] " << msg << '\n';
}

void log_debug(const std::string& msg) {
  if (log_level() >= 3) std::cerr << "[debug] " << msg << '\n';
}

// ---------------------------------------------------------------------------
// configuration: defaults, JSON overlay with unknown-key rejection, CLI
// flag overrides on top
// ---------------------------------------------------------------------------

struct PipelineConfig {
  std::uint64_t seed = 0;
  int jobs = 1;

  // preprocess
  int period_days = 1;
  bool drop_leap = true;
  bool restart_runs = true;
  std::vector<int> months;  // empty = keep all
  bool derive = false;
  bool iqr = true;
  bool zscore_on = true;
  int T = 14;
  int stride = 1;

  // clustering
  int k = 0;  // 0 = select automatically
  int k_min = 2;
  int k_max = 6;

  // model
  int encoder_width = 32;
  int latent_dim = 4;
  int epochs = 50;
  int patience = 10;
  int batch = 64;
  double lr = 1e-3;
  double val_fraction = 0.2;

  // threshold
  double init_quantile = 0.98;
  double risk_q = 0.01;
  int window = 62;

  // attribution
  std::string rule = "eq2";            // eq2 | alg1
  std::string direction = "positive";  // positive | negative | absolute
  bool everywhere = false;

  // synth
  int synth_features = 8;
  int synth_length = 5000;
  double synth_rho = 0.8;
  double synth_period = 60.0;
  double synth_amplitude = 0.5;
  double synth_rate = 0.02;
  double synth_magnitude = 6.0;
  int synth_min_gap = 28;
  std::string synth_start = "2000-01-01";
  std::string synth_culprits = "single";

  // classifier
  int cls_epochs = 50;
  int cls_patience = 10;
  int cls_batch = 64;
  double cls_lr = 1e-3;
  int cls_window = 7;
  double cls_dropout = 0.2;
  double cls_train_fraction = 0.7;
  double cls_threshold = 0.5;
};

void reject_unknown(const ordered_json& j, const std::set<std::string>& known,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) {
      fail(ErrorKind::InvalidConfig, "unknown config key '" + where + key + "'");
    }
  }
}

template <typename T>
void maybe(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

PipelineConfig load_config(const std::string& path) {
  PipelineConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open config '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::IoFailure, "cannot parse config '" + path + "': " + e.what());
  }

  reject_unknown(j, {"seed", "jobs", "preprocess", "clustering", "model", "threshold",
                     "attribution", "synth", "classifier"},
                 "");
  maybe(j, "seed", c.seed);
  maybe(j, "jobs", c.jobs);
  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    reject_unknown(p, {"period_days", "drop_leap", "restart_runs", "months", "derive",
                       "iqr_clean", "zscore", "T", "stride"},
                   "preprocess.");
    maybe(p, "period_days", c.period_days);
    maybe(p, "drop_leap", c.drop_leap);
    maybe(p, "restart_runs", c.restart_runs);
    maybe(p, "months", c.months);
    maybe(p, "derive", c.derive);
    maybe(p, "iqr_clean", c.iqr);
    maybe(p, "zscore", c.zscore_on);
    maybe(p, "T", c.T);
    maybe(p, "stride", c.stride);
  }
  if (j.contains("clustering")) {
    const auto& p = j.at("clustering");
    reject_unknown(p, {"k", "k_min", "k_max"}, "clustering.");
    maybe(p, "k", c.k);
    maybe(p, "k_min", c.k_min);
    maybe(p, "k_max", c.k_max);
  }
  if (j.contains("model")) {
    const auto& p = j.at("model");
    reject_unknown(p, {"encoder_width", "latent_dim", "epochs", "patience", "batch", "lr",
                       "val_fraction"},
                   "model.");
    maybe(p, "encoder_width", c.encoder_width);
    maybe(p, "latent_dim", c.latent_dim);
    maybe(p, "epochs", c.epochs);
    maybe(p, "patience", c.patience);
    maybe(p, "batch", c.batch);
    maybe(p, "lr", c.lr);
    maybe(p, "val_fraction", c.val_fraction);
  }
  if (j.contains("threshold")) {
    const auto& p = j.at("threshold");
    reject_unknown(p, {"init_quantile", "risk_q", "window"}, "threshold.");
    maybe(p, "init_quantile", c.init_quantile);
    maybe(p, "risk_q", c.risk_q);
    maybe(p, "window", c.window);
  }
  if (j.contains("attribution")) {
    const auto& p = j.at("attribution");
    reject_unknown(p, {"rule", "direction", "everywhere"}, "attribution.");
    maybe(p, "rule", c.rule);
    maybe(p, "direction", c.direction);
    maybe(p, "everywhere", c.everywhere);
  }
  if (j.contains("synth")) {
    const auto& p = j.at("synth");
    reject_unknown(p, {"features", "length", "rho", "seasonal_period", "seasonal_amplitude",
                       "rate", "magnitude", "min_gap", "start", "culprits"},
                   "synth.");
    maybe(p, "features", c.synth_features);
    maybe(p, "length", c.synth_length);
    maybe(p, "rho", c.synth_rho);
    maybe(p, "seasonal_period", c.synth_period);
    maybe(p, "seasonal_amplitude", c.synth_amplitude);
    maybe(p, "rate", c.synth_rate);
    maybe(p, "magnitude", c.synth_magnitude);
    maybe(p, "min_gap", c.synth_min_gap);
    maybe(p, "start", c.synth_start);
    maybe(p, "culprits", c.synth_culprits);
  }
  if (j.contains("classifier")) {
    const auto& p = j.at("classifier");
    reject_unknown(p, {"epochs", "patience", "batch", "lr", "window", "dropout",
                       "train_fraction", "threshold"},
                   "classifier.");
    maybe(p, "epochs", c.cls_epochs);
    maybe(p, "patience", c.cls_patience);
    maybe(p, "batch", c.cls_batch);
    maybe(p, "lr", c.cls_lr);
    maybe(p, "window", c.cls_window);
    maybe(p, "dropout", c.cls_dropout);
    maybe(p, "train_fraction", c.cls_train_fraction);
    maybe(p, "threshold", c.cls_threshold);
  }
  return c;
}

AttributionOptions attribution_options(const PipelineConfig& c) {
  AttributionOptions opt;
  if (c.rule == "eq2") {
    opt.rule = MembershipRule::CounterfactualExceedsBaseline;
  } else if (c.rule == "alg1") {
    opt.rule = MembershipRule::DeltaExceedsBaseline;
  } else {
    fail(ErrorKind::InvalidConfig, "attribution rule must be eq2 or alg1");
  }
  if (c.direction == "positive") {
    opt.direction = Direction::Positive;
  } else if (c.direction == "negative") {
    opt.direction = Direction::Negative;
  } else if (c.direction == "absolute") {
    opt.direction = Direction::Absolute;
  } else {
    fail(ErrorKind::InvalidConfig, "direction must be positive, negative or absolute");
  }
  opt.everywhere = c.everywhere;
  opt.jobs = c.jobs;
  return opt;
}

ClassifierParams classifier_params(const PipelineConfig& c) {
  ClassifierParams p;
  p.epochs = c.cls_epochs;
  p.patience = c.cls_patience;
  p.batch = c.cls_batch;
  p.lr = c.cls_lr;
  p.window = c.cls_window;
  p.dropout = c.cls_dropout;
  p.train_fraction = c.cls_train_fraction;
  p.threshold = c.cls_threshold;
  return p;
}

SynthConfig synth_config(const PipelineConfig& c) {
  SynthConfig s;
  s.features = c.synth_features;
  s.length = c.synth_length;
  s.rho = c.synth_rho;
  s.seasonal_period = c.synth_period;
  s.seasonal_amplitude = c.synth_amplitude;
  s.anomaly_rate = c.synth_rate;
  s.magnitude = c.synth_magnitude;
  s.min_gap = c.synth_min_gap;
  s.start_timestamp = parse_iso8601(c.synth_start);
  if (c.synth_culprits == "single") {
    s.culprit_policy = SynthConfig::Culprits::Single;
  } else if (c.synth_culprits == "multi") {
    s.culprit_policy = SynthConfig::Culprits::Multi;
  } else {
    fail(ErrorKind::InvalidConfig, "culprits must be single or multi");
  }
  s.seed = c.seed;
  return s;
}

// ---------------------------------------------------------------------------
// stage helpers shared by subcommands and `pipeline`
// ---------------------------------------------------------------------------

struct PreprocessOutput {
  TimeTable table;
  NormStats stats;
};

PreprocessOutput run_preprocess(const TimeTable& raw, const PipelineConfig& c,
                                const std::optional<NormStats>& stats_in) {
  TimeTable t = raw;
  if (!c.months.empty()) {
    t = filter_months(t, std::set<int>(c.months.begin(), c.months.end()));
  }
  if (c.period_days > 1 || c.drop_leap) {
    t = aggregate_time(t, {.period_days = c.period_days,
                           .drop_leap = c.drop_leap,
                           .restart_runs = c.restart_runs});
  }
  if (c.derive) t = derive_features(t);
  if (c.iqr) t = iqr_clean(t);
  PreprocessOutput out;
  if (c.zscore_on) {
    auto z = zscore(t, stats_in);
    out.table = std::move(z.table);
    out.stats = std::move(z.stats);
  } else {
    out.table = std::move(t);
  }
  return out;
}

ClusterAssignment run_cluster(const TimeTable& table, const PipelineConfig& c) {
  const auto corr = correlation_matrix(table);
  const int F = static_cast<int>(table.features());
  if (c.k > 0) {
    auto a = kmeans_features(corr, c.k, c.seed);
    a.silhouette = a.k >= 2 ? silhouette(corr, a) : 0.0;
    return a;
  }
  const int lo = std::min(c.k_min, F);
  const int hi = std::min(c.k_max, F);
  if (lo >= hi) {
    auto a = kmeans_features(corr, lo, c.seed);
    a.silhouette = a.k >= 2 ? silhouette(corr, a) : 0.0;
    return a;
  }
  return select_k(corr, lo, hi, c.seed);
}

TrainResult run_train(const TimeTable& table, const ClusterAssignment& assignment,
                      const NormStats& stats, const PipelineConfig& c) {
  auto model = build_model(assignment, table.feature_names,
                           {.T = c.T,
                            .encoder_width = c.encoder_width,
                            .latent_dim = c.latent_dim,
                            .seed = c.seed});
  model.norm_stats = stats;
  const auto ws = window(table, c.T, c.stride);
  return train(model, ws,
               {.epochs = c.epochs,
                .patience = c.patience,
                .batch = c.batch,
                .lr = c.lr,
                .val_fraction = c.val_fraction,
                .seed = c.seed});
}

void save_history(const std::vector<EpochLoss>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    out << e << ',' << format_double(history[e].train) << ','
        << format_double(history[e].val) << '\n';
  }
}

std::vector<double> load_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open '" + path + "'");
  std::vector<double> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    char* end = nullptr;
    const double v = std::strtod(line.c_str(), &end);
    if (end == line.c_str() || *end != '\0') {
      if (first) {
        first = false;
        continue;  // tolerate a header line
      }
      fail(ErrorKind::IoFailure, "cannot parse number '" + line + "' in " + path);
    }
    first = false;
    out.push_back(v);
  }
  return out;
}

// `[grid=]path`; the tag defaults to the file stem
std::pair<std::string, std::string> split_grid_arg(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) {
    return {fs::path(arg).stem().string(), arg};
  }
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

void write_json_file(const ordered_json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << j.dump(1) << '\n';
}

ordered_json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::IoFailure, "cannot parse '" + path + "': " + e.what());
  }
  return j;
}

void run_pipeline_for_grid(const TimeTable& raw, const PipelineConfig& c, const fs::path& dir,
                           const ModelCheckpoint* pooled_model) {
  fs::create_directories(dir);
  const auto pre = run_preprocess(raw, c, std::nullopt);
  save_table(pre.table, (dir / "preprocessed.csv").string());
  write_json_file(norm_stats_to_json(pre.stats), (dir / "norm_stats.json").string());

  ModelCheckpoint model;
  if (pooled_model) {
    model = *pooled_model;
  } else {
    const auto assignment = run_cluster(pre.table, c);
    write_json_file(assignment_to_json(assignment), (dir / "clusters.json").string());
    auto trained = run_train(pre.table, assignment, pre.stats, c);
    save_history(trained.history, (dir / "history.csv").string());
    model = std::move(trained.model);
  }
  save_checkpoint(model, (dir / "model.json").string());

  const auto ws = window(pre.table, model.T, 1);
  const auto scores = score_series(model, ws);
  save_scores(scores, (dir / "scores.csv").string());

  auto thresholds = dynamic_threshold(scores, c.window, c.init_quantile, c.risk_q);
  thresholds = flag_anomalies(scores, thresholds);
  save_threshold_series(thresholds, (dir / "flags.csv").string());

  const auto attr = attribute(model, pre.table, scores, thresholds, attribution_options(c));
  save_attribution(attr, (dir / "attributions.csv").string());
  save_ranking(rank_features(attr, 1), (dir / "ranking.json").string());
  log_debug("finished " + dir.string());
}

// ---------------------------------------------------------------------------
// CLI wiring
// ---------------------------------------------------------------------------

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;

  PipelineConfig resolve() const {
    PipelineConfig c = load_config(config_path);
    if (seed) c.seed = *seed;
    if (jobs) c.jobs = *jobs;
    return c;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON configuration file");
  cmd->add_option("--seed", args.seed, "random seed (overrides config)");
  cmd->add_option("--jobs", args.jobs, "worker threads (overrides config)");
}

int dispatch(int argc, char** argv) {
  CLI::App app{"multivariate time-series anomaly detection and feature attribution"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth_cmd = app.add_subcommand("synth", "generate seeded synthetic data");
  CommonArgs synth_common;
  add_common(synth_cmd, synth_common);
  std::string synth_out = "synthetic.csv", synth_truth;
  std::optional<int> synth_F, synth_M;
  std::optional<double> synth_rate, synth_mag, synth_rho, synth_amp;
  synth_cmd->add_option("--out", synth_out, "output CSV");
  synth_cmd->add_option("--truth", synth_truth, "ground-truth JSON sidecar");
  synth_cmd->add_option("--features", synth_F, "feature count");
  synth_cmd->add_option("--length", synth_M, "number of timesteps");
  synth_cmd->add_option("--rate", synth_rate, "anomaly rate");
  synth_cmd->add_option("--magnitude", synth_mag, "anomaly magnitude in sigmas");
  synth_cmd->add_option("--rho", synth_rho, "within-block correlation");
  synth_cmd->add_option("--amplitude", synth_amp, "seasonal amplitude");
  synth_cmd->callback([&] {
    PipelineConfig c = synth_common.resolve();
    if (synth_F) c.synth_features = *synth_F;
    if (synth_M) c.synth_length = *synth_M;
    if (synth_rate) c.synth_rate = *synth_rate;
    if (synth_mag) c.synth_magnitude = *synth_mag;
    if (synth_rho) c.synth_rho = *synth_rho;
    if (synth_amp) c.synth_amplitude = *synth_amp;
    auto [table, truth] = generate(synth_config(c));
    save_table(table, synth_out);
    if (!synth_truth.empty()) save_ground_truth(truth, synth_truth);
    log_info("wrote " + synth_out);
  });

  // ---- preprocess ----
  auto* pre_cmd = app.add_subcommand("preprocess", "filter, aggregate, derive, clean, normalize");
  CommonArgs pre_common;
  add_common(pre_cmd, pre_common);
  std::string pre_in, pre_out = "preprocessed.csv", pre_stats_out, pre_stats_in;
  std::vector<int> pre_months;
  std::optional<int> pre_period;
  bool pre_keep_leap = false, pre_derive = false, pre_no_iqr = false, pre_no_zscore = false;
  bool pre_straddle = false;
  pre_cmd->add_option("--in", pre_in, "input CSV")->required();
  pre_cmd->add_option("--out", pre_out, "output CSV");
  pre_cmd->add_option("--stats-out", pre_stats_out, "write fitted NormStats JSON");
  pre_cmd->add_option("--stats-in", pre_stats_in, "apply existing NormStats JSON");
  pre_cmd->add_option("--months", pre_months, "calendar months to keep");
  pre_cmd->add_option("--aggregate", pre_period, "aggregate to N-day means");
  pre_cmd->add_flag("--keep-leap", pre_keep_leap, "keep Feb 29 rows");
  pre_cmd->add_flag("--derive", pre_derive, "append tw10 and ssrdas");
  pre_cmd->add_flag("--no-iqr", pre_no_iqr, "skip IQR outlier replacement");
  pre_cmd->add_flag("--no-zscore", pre_no_zscore, "skip z-score normalization");
  pre_cmd->add_flag("--straddle-runs", pre_straddle,
                    "let aggregation blocks straddle month-run gaps");
  pre_cmd->callback([&] {
    PipelineConfig c = pre_common.resolve();
    if (!pre_months.empty()) c.months = pre_months;
    if (pre_period) c.period_days = *pre_period;
    if (pre_keep_leap) c.drop_leap = false;
    if (pre_derive) c.derive = true;
    if (pre_no_iqr) c.iqr = false;
    if (pre_no_zscore) c.zscore_on = false;
    if (pre_straddle) c.restart_runs = false;

    std::optional<NormStats> stats_in;
    if (!pre_stats_in.empty()) stats_in = norm_stats_from_json(read_json_file(pre_stats_in));
    const auto raw = load_table(pre_in);
    const auto out = run_preprocess(raw, c, stats_in);
    save_table(out.table, pre_out);
    if (!pre_stats_out.empty()) {
      write_json_file(norm_stats_to_json(out.stats), pre_stats_out);
    }
    log_info("wrote " + pre_out);
  });

  // ---- cluster ----
  auto* cluster_cmd = app.add_subcommand("cluster", "correlation matrix + k-means partition");
  CommonArgs cluster_common;
  add_common(cluster_cmd, cluster_common);
  std::string cluster_in, cluster_out = "clusters.json", corr_out;
  std::optional<int> cluster_k, cluster_kmin, cluster_kmax;
  cluster_cmd->add_option("--in", cluster_in, "normalized input CSV")->required();
  cluster_cmd->add_option("--out", cluster_out, "assignment JSON");
  cluster_cmd->add_option("--corr-out", corr_out, "also write the correlation matrix CSV");
  cluster_cmd->add_option("--k", cluster_k, "fixed cluster count (skips selection)");
  cluster_cmd->add_option("--k-min", cluster_kmin, "selection range lower bound");
  cluster_cmd->add_option("--k-max", cluster_kmax, "selection range upper bound");
  cluster_cmd->callback([&] {
    PipelineConfig c = cluster_common.resolve();
    if (cluster_k) c.k = *cluster_k;
    if (cluster_kmin) c.k_min = *cluster_kmin;
    if (cluster_kmax) c.k_max = *cluster_kmax;
    const auto table = load_table(cluster_in);
    if (!corr_out.empty()) {
      const auto corr = correlation_matrix(table);
      std::ofstream out(corr_out);
      if (!out) fail(ErrorKind::IoFailure, "cannot write '" + corr_out + "'");
      out << "feature";
      for (const auto& n : corr.names) out << ',' << n;
      out << '\n';
      for (std::size_t i = 0; i < corr.size(); ++i) {
        out << corr.names[i];
        for (std::size_t j = 0; j < corr.size(); ++j) out << ',' << format_double(corr.at(i, j));
        out << '\n';
      }
    }
    const auto assignment = run_cluster(table, c);
    write_json_file(assignment_to_json(assignment), cluster_out);
    log_info("k=" + std::to_string(assignment.k) +
             " silhouette=" + format_double(assignment.silhouette));
  });

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train the cluster-partitioned LSTM-VAE");
  CommonArgs train_common;
  add_common(train_cmd, train_common);
  std::string train_in, train_clusters, train_out = "model.json", train_history, train_stats;
  std::optional<int> train_T, train_width, train_latent, train_epochs, train_patience, train_batch;
  std::optional<double> train_lr, train_val;
  train_cmd->add_option("--in", train_in, "normalized input CSV")->required();
  train_cmd->add_option("--clusters", train_clusters, "assignment JSON")->required();
  train_cmd->add_option("--out", train_out, "checkpoint JSON");
  train_cmd->add_option("--history-out", train_history, "write per-epoch losses CSV");
  train_cmd->add_option("--stats", train_stats, "NormStats JSON to embed in the checkpoint");
  train_cmd->add_option("--T", train_T, "window length");
  train_cmd->add_option("--encoder-width", train_width, "LSTM hidden width");
  train_cmd->add_option("--latent-dim", train_latent, "latent dimension per cluster");
  train_cmd->add_option("--epochs", train_epochs, "max epochs");
  train_cmd->add_option("--patience", train_patience, "early-stopping patience");
  train_cmd->add_option("--batch", train_batch, "batch size");
  train_cmd->add_option("--lr", train_lr, "learning rate");
  train_cmd->add_option("--val-fraction", train_val, "validation fraction");
  train_cmd->callback([&] {
    PipelineConfig c = train_common.resolve();
    if (train_T) c.T = *train_T;
    if (train_width) c.encoder_width = *train_width;
    if (train_latent) c.latent_dim = *train_latent;
    if (train_epochs) c.epochs = *train_epochs;
    if (train_patience) c.patience = *train_patience;
    if (train_batch) c.batch = *train_batch;
    if (train_lr) c.lr = *train_lr;
    if (train_val) c.val_fraction = *train_val;

    const auto table = load_table(train_in);
    const auto assignment = assignment_from_json(read_json_file(train_clusters));
    NormStats stats;
    if (!train_stats.empty()) stats = norm_stats_from_json(read_json_file(train_stats));
    auto result = run_train(table, assignment, stats, c);
    save_checkpoint(result.model, train_out);
    if (!train_history.empty()) save_history(result.history, train_history);
    log_info("trained " + std::to_string(result.history.size()) + " epochs");
  });

  // ---- score ----
  auto* score_cmd = app.add_subcommand("score", "per-timestamp anomaly scores");
  CommonArgs score_common;
  add_common(score_cmd, score_common);
  std::string score_in, score_model, score_out = "scores.csv";
  score_cmd->add_option("--in", score_in, "normalized input CSV")->required();
  score_cmd->add_option("--model", score_model, "checkpoint JSON")->required();
  score_cmd->add_option("--out", score_out, "scores CSV");
  score_cmd->callback([&] {
    const auto table = load_table(score_in);
    const auto model = load_checkpoint(score_model);
    const auto ws = window(table, model.T, 1);
    save_scores(score_series(model, ws), score_out);
    log_info("wrote " + score_out);
  });

  // ---- threshold ----
  auto* thr_cmd = app.add_subcommand("threshold", "dynamic POT threshold + flags");
  CommonArgs thr_common;
  add_common(thr_cmd, thr_common);
  std::string thr_in, thr_out = "flags.csv";
  std::optional<double> thr_q, thr_risk;
  std::optional<int> thr_window;
  thr_cmd->add_option("--in", thr_in, "scores CSV")->required();
  thr_cmd->add_option("--out", thr_out, "threshold/flag CSV");
  thr_cmd->add_option("--init-quantile", thr_q, "initial POT quantile");
  thr_cmd->add_option("--risk-q", thr_risk, "target exceedance probability");
  thr_cmd->add_option("--window", thr_window, "sliding window length");
  thr_cmd->callback([&] {
    PipelineConfig c = thr_common.resolve();
    if (thr_q) c.init_quantile = *thr_q;
    if (thr_risk) c.risk_q = *thr_risk;
    if (thr_window) c.window = *thr_window;
    const auto scores = load_scores(thr_in);
    auto thresholds = dynamic_threshold(scores, c.window, c.init_quantile, c.risk_q);
    thresholds = flag_anomalies(scores, thresholds);
    save_threshold_series(thresholds, thr_out);
    std::size_t n = 0;
    for (bool f : thresholds.flags) n += f;
    log_info(std::to_string(n) + " of " + std::to_string(thresholds.size()) + " flagged");
  });

  // ---- attribute ----
  auto* attr_cmd = app.add_subcommand("attribute", "counterfactual feature attribution");
  CommonArgs attr_common;
  add_common(attr_cmd, attr_common);
  std::string attr_in, attr_model, attr_scores, attr_flags, attr_out = "attributions.csv";
  std::string attr_rule, attr_direction;
  bool attr_everywhere = false;
  attr_cmd->add_option("--in", attr_in, "normalized input CSV")->required();
  attr_cmd->add_option("--model", attr_model, "checkpoint JSON")->required();
  attr_cmd->add_option("--scores", attr_scores, "baseline scores CSV")->required();
  attr_cmd->add_option("--flags", attr_flags, "threshold/flag CSV")->required();
  attr_cmd->add_option("--out", attr_out, "attribution CSV");
  attr_cmd->add_option("--rule", attr_rule, "membership rule: eq2 | alg1");
  attr_cmd->add_option("--direction", attr_direction, "positive | negative | absolute");
  attr_cmd->add_flag("--everywhere", attr_everywhere, "compute deltas at every timestamp");
  attr_cmd->callback([&] {
    PipelineConfig c = attr_common.resolve();
    if (!attr_rule.empty()) c.rule = attr_rule;
    if (!attr_direction.empty()) c.direction = attr_direction;
    if (attr_everywhere) c.everywhere = true;
    const auto table = load_table(attr_in);
    const auto model = load_checkpoint(attr_model);
    const auto baseline = load_scores(attr_scores);
    const auto flags = load_threshold_series(attr_flags);
    const auto attr = attribute(model, table, baseline, flags, attribution_options(c));
    save_attribution(attr, attr_out);
    log_info("wrote " + attr_out);
  });

  // ---- rank ----
  auto* rank_cmd = app.add_subcommand("rank", "aggregate winners into a feature ranking");
  CommonArgs rank_common;
  add_common(rank_cmd, rank_common);
  std::vector<std::string> rank_in;
  std::string rank_out = "ranking.json";
  std::optional<int> rank_grids, rank_topk;
  rank_cmd->add_option("--in", rank_in, "attribution CSV (repeatable)")->required();
  rank_cmd->add_option("--out", rank_out, "ranking JSON");
  rank_cmd->add_option("--n-grids", rank_grids, "grid count for frequency normalization");
  rank_cmd->add_option("--top", rank_topk, "keep only the top K entries");
  rank_cmd->callback([&] {
    std::vector<AttributionSeries> attrs;
    for (const auto& path : rank_in) attrs.push_back(load_attribution(path));
    const int n_grids = rank_grids ? *rank_grids : static_cast<int>(attrs.size());
    auto ranked = rank_features(attrs, n_grids);
    if (rank_topk) ranked = topk(ranked, static_cast<std::size_t>(*rank_topk));
    save_ranking(ranked, rank_out);
    log_info("wrote " + rank_out);
  });

  // ---- evaluate ----
  auto* eval_cmd = app.add_subcommand("evaluate", "top-k classifier benchmark per ranking");
  CommonArgs eval_common;
  add_common(eval_cmd, eval_common);
  std::string eval_in, eval_labels, eval_ranking, eval_out = "report.csv";
  std::vector<std::string> eval_external;
  std::optional<int> eval_k, eval_epochs;
  eval_cmd->add_option("--in", eval_in, "feature table CSV")->required();
  eval_cmd->add_option("--labels", eval_labels, "timestamp,label CSV")->required();
  eval_cmd->add_option("--ranking", eval_ranking, "our ranking JSON")->required();
  eval_cmd->add_option("--external", eval_external, "external ranking name=path (repeatable)");
  eval_cmd->add_option("--k", eval_k, "top-k features to train on")->required();
  eval_cmd->add_option("--epochs", eval_epochs, "classifier epochs");
  eval_cmd->add_option("--out", eval_out, "Table-style report CSV");
  eval_cmd->callback([&] {
    PipelineConfig c = eval_common.resolve();
    if (eval_epochs) c.cls_epochs = *eval_epochs;
    const auto table = load_table(eval_in);
    const auto label_rows = load_labels(eval_labels);
    require(label_rows.size() == table.rows(), ErrorKind::LengthMismatch,
            "labels do not align with the table");
    std::vector<bool> labels;
    for (std::size_t r = 0; r < label_rows.size(); ++r) {
      require(label_rows[r].first == table.timestamps[r], ErrorKind::LengthMismatch,
              "label timestamps do not match the table");
      labels.push_back(label_rows[r].second);
    }
    const auto ours = load_ranking(eval_ranking);
    std::vector<std::pair<std::string, RankedFeatures>> external;
    for (const auto& spec : eval_external) {
      const auto [name, path] = split_grid_arg(spec);
      external.emplace_back(name, load_ranking(path));
    }
    const auto rows = compare_rankings(ours, external, static_cast<std::size_t>(*eval_k), table,
                                       labels, classifier_params(c), c.seed);
    save_metrics_report(rows, eval_out);
    log_info("wrote " + eval_out);
  });

  // ---- ttest ----
  auto* ttest_cmd = app.add_subcommand("ttest", "Welch two-sample t-test");
  CommonArgs ttest_common;
  add_common(ttest_cmd, ttest_common);
  std::string ttest_a, ttest_b, ttest_out;
  ttest_cmd->add_option("--a", ttest_a, "first sample, one value per line")->required();
  ttest_cmd->add_option("--b", ttest_b, "second sample, one value per line")->required();
  ttest_cmd->add_option("--out", ttest_out, "result JSON (default stdout)");
  ttest_cmd->callback([&] {
    const auto a = load_samples(ttest_a);
    const auto b = load_samples(ttest_b);
    const auto r = welch_ttest(a, b);
    ordered_json j;
    j["t_stat"] = r.t_stat;
    j["p_value"] = r.p_value;
    j["dof"] = r.dof;
    if (ttest_out.empty()) {
      std::cout << j.dump(1) << '\n';
    } else {
      write_json_file(j, ttest_out);
    }
  });

  // ---- decadal ----
  auto* dec_cmd = app.add_subcommand("decadal", "decadal/monthly anomaly counts per grid");
  CommonArgs dec_common;
  add_common(dec_cmd, dec_common);
  std::vector<std::string> dec_in;
  std::string dec_out = "decadal.csv";
  std::vector<int> dec_months{5, 6, 7, 8, 9};
  dec_cmd->add_option("--in", dec_in, "flag CSV as [grid=]path (repeatable)")->required();
  dec_cmd->add_option("--out", dec_out, "output CSV");
  dec_cmd->add_option("--months", dec_months, "months to include (default May-September)");
  dec_cmd->callback([&] {
    std::vector<std::pair<std::string, ThresholdSeries>> by_grid;
    for (const auto& arg : dec_in) {
      const auto [grid, path] = split_grid_arg(arg);
      by_grid.emplace_back(grid, load_threshold_series(path));
    }
    const auto rows = decadal_counts(by_grid, std::set<int>(dec_months.begin(), dec_months.end()));
    save_decadal(rows, dec_out);
    log_info("wrote " + dec_out);
  });

  // ---- pipeline ----
  auto* pipe_cmd = app.add_subcommand("pipeline", "end-to-end run, per grid by default");
  CommonArgs pipe_common;
  add_common(pipe_cmd, pipe_common);
  std::string pipe_in, pipe_out_dir = "out";
  bool pipe_pooled = false;
  pipe_cmd->add_option("--in", pipe_in, "raw input CSV (may hold multiple grids)")->required();
  pipe_cmd->add_option("--out-dir", pipe_out_dir, "output directory");
  pipe_cmd->add_flag("--pooled", pipe_pooled, "train one model on all grids pooled");
  pipe_cmd->callback([&] {
    PipelineConfig c = pipe_common.resolve();
    const auto tables = load_tables(pipe_in);
    require(!tables.empty(), ErrorKind::EmptyInput, "no rows in '" + pipe_in + "'");
    const fs::path root(pipe_out_dir);

    if (tables.size() == 1) {
      run_pipeline_for_grid(tables[0], c, root, nullptr);
      log_info("pipeline outputs in " + root.string());
      return;
    }

    std::optional<ModelCheckpoint> pooled;
    if (pipe_pooled) {
      // one model fitted on every grid's windows, then applied per grid
      std::vector<PreprocessOutput> pres;
      pres.reserve(tables.size());
      for (const auto& t : tables) pres.push_back(run_preprocess(t, c, std::nullopt));
      const auto assignment = run_cluster(pres[0].table, c);
      auto model = build_model(assignment, pres[0].table.feature_names,
                               {.T = c.T,
                                .encoder_width = c.encoder_width,
                                .latent_dim = c.latent_dim,
                                .seed = c.seed});
      WindowSet all;
      for (const auto& pre : pres) {
        const auto ws = window(pre.table, c.T, c.stride);
        if (all.feature_names.empty()) {
          all = ws;
        } else {
          require(ws.feature_names == all.feature_names, ErrorKind::ModelDataMismatch,
                  "grids disagree on features");
          all.data.insert(all.data.end(), ws.data.begin(), ws.data.end());
          all.origin_index.insert(all.origin_index.end(), ws.origin_index.begin(),
                                  ws.origin_index.end());
          all.origin_timestamps.insert(all.origin_timestamps.end(),
                                       ws.origin_timestamps.begin(), ws.origin_timestamps.end());
        }
      }
      pooled = train(model, all,
                     {.epochs = c.epochs,
                      .patience = c.patience,
                      .batch = c.batch,
                      .lr = c.lr,
                      .val_fraction = c.val_fraction,
                      .seed = c.seed})
                   .model;
      fs::create_directories(root);
      save_checkpoint(*pooled, (root / "model.json").string());
    }

    // per-grid pipelines are independent; run them across workers
    {
      std::atomic<std::size_t> next{0};
      std::exception_ptr first_error;
      std::mutex error_mu;
      auto work = [&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= tables.size()) return;
          try {
            run_pipeline_for_grid(tables[i], c, root / tables[i].grid_id.value_or("grid"),
                                  pooled ? &*pooled : nullptr);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      };
      const int workers = std::clamp<int>(c.jobs, 1, static_cast<int>(tables.size()));
      if (workers == 1) {
        work();
      } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
      }
      if (first_error) std::rethrow_exception(first_error);
    }

    // merged ranking across grids
    std::vector<AttributionSeries> attrs;
    attrs.reserve(tables.size());
    for (const auto& t : tables) {
      attrs.push_back(
          load_attribution((root / t.grid_id.value_or("grid") / "attributions.csv").string()));
    }
    save_ranking(rank_features(attrs, static_cast<int>(tables.size())),
                 (root / "ranking.json").string());
    log_info("pipeline outputs in " + root.string());
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const Error& e) {
    ordered_json err;
    err["error"] = error_kind_name(e.kind());
    err["message"] = e.what();
    std::cerr << err.dump() << '\n';
    switch (e.category()) {
      case ErrorCategory::Validation:
        return 2;
      case ErrorCategory::Numerical:
        return 3;
      case ErrorCategory::Io:
        return 4;
    }
    return 2;
  } catch (const std::exception& e) {
    ordered_json err;
    err["error"] = "Internal";
    err["message"] = e.what();
    std::cerr << err.dump() << '\n';
    return 1;
  }
}
