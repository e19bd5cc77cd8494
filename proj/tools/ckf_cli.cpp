// ckf: command-line driver for the collaborative Kalman filter engine.
//
//   ckf fit     --input events.csv --dim 10 --sigma 1.76 --partition stars:5 ...
//   ckf track   --input prices.csv --dim 5 --sigma 0.01 --c-row 0.05 --c-col 0
//   ckf synth   --rows 200 --cols 100 --events 200000 --out data/
//   ckf inspect run1/ckpt

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ckf/ckf.hpp"

namespace fs = std::filesystem;

namespace {

struct ModelFlags {
  int dim = 10;
  double sigma = 1.0;
  std::string partition = "stars:5";
  std::string width = "sigma";
  std::string drift = "shared";
  double alpha = 0.0;
  std::optional<double> c;
  std::optional<double> c_row;
  std::optional<double> c_col;
  std::optional<std::string> row_scope;
  std::optional<std::string> col_scope;
  double a0 = -4.6;
  int iters = 5;
  double tol = 1e-6;
  std::optional<std::uint64_t> seed;
  double init_scale = 1.0;

  void add_to(CLI::App& app, bool with_partition) {
    app.add_option("--dim", dim, "latent dimension")->check(CLI::PositiveNumber);
    app.add_option("--sigma", sigma, "observation noise standard deviation")->check(CLI::PositiveNumber);
    if (with_partition) {
      app.add_option("--partition", partition, "stars:M | halfstars | grid:LOW:STEP:M | real");
      app.add_option("--width", width, "cell width: sigma | half-sigma | <number>");
    }
    app.add_option("--drift", drift, "none | fixed | shared | per-entity");
    app.add_option("--alpha", alpha, "drift per unit time for --drift fixed");
    app.add_option("--c", c, "variance rate of the log drift (both sides)");
    app.add_option("--c-row", c_row, "variance rate of the row log drift");
    app.add_option("--c-col", c_col, "variance rate of the column log drift");
    app.add_option("--row-scope", row_scope, "shared | per-entity")->check(CLI::IsMember({"shared", "per-entity"}));
    app.add_option("--col-scope", col_scope, "shared | per-entity")->check(CLI::IsMember({"shared", "per-entity"}));
    app.add_option("--a0", a0, "initial log drift");
    app.add_option("--iters", iters, "coordinate sweeps per event")->check(CLI::PositiveNumber);
    app.add_option("--tol", tol, "early-exit tolerance on mean movement");
    app.add_option("--seed", seed, "random seed (falls back to $CKF_SEED, then 0)");
    app.add_option("--init-scale", init_scale, "std. dev. of initial latent means");
  }

  ckf::ModelConfig build(ckf::DriftScope default_row, ckf::DriftScope default_col) const {
    ckf::ModelConfig cfg;
    cfg.latent_dim = dim;
    cfg.obs_sigma = sigma;
    cfg.initial_log_drift = a0;
    cfg.iters = iters;
    cfg.tol = tol;
    cfg.init_scale = init_scale;
    cfg.seed = resolve_seed();

    cfg.row_scope = default_row;
    cfg.col_scope = default_col;
    if (drift == "none") {
      cfg.drift_mode = ckf::DriftMode::none;
    } else if (drift == "fixed") {
      cfg.drift_mode = ckf::DriftMode::fixed;
      cfg.fixed_alpha = alpha;
    } else if (drift == "shared") {
      cfg.drift_mode = ckf::DriftMode::gbm;
      cfg.row_scope = cfg.col_scope = ckf::DriftScope::shared;
    } else if (drift == "per-entity") {
      cfg.drift_mode = ckf::DriftMode::gbm;
      cfg.row_scope = cfg.col_scope = ckf::DriftScope::per_entity;
    } else if (drift == "gbm") {
      cfg.drift_mode = ckf::DriftMode::gbm;
    } else {
      throw ckf::ConfigError("unknown --drift '" + drift + "'");
    }
    auto scope = [](const std::string& s) {
      return s == "shared" ? ckf::DriftScope::shared : ckf::DriftScope::per_entity;
    };
    if (row_scope) cfg.row_scope = scope(*row_scope);
    if (col_scope) cfg.col_scope = scope(*col_scope);
    cfg.c_row = c_row.value_or(c.value_or(0.0));
    cfg.c_col = c_col.value_or(c.value_or(0.0));
    cfg.partition = parse_partition();
    cfg.validate();
    return cfg;
  }

  std::uint64_t resolve_seed() const {
    if (seed) return *seed;
    if (const char* env = std::getenv("CKF_SEED")) {
      try {
        return std::stoull(env);
      } catch (const std::exception&) {
        throw ckf::ConfigError("CKF_SEED is not an unsigned integer");
      }
    }
    return 0;
  }

  double resolve_width() const {
    if (width == "sigma") return sigma;
    if (width == "half-sigma") return 0.5 * sigma;
    try {
      return std::stod(width);
    } catch (const std::exception&) {
      throw ckf::ConfigError("bad --width '" + width + "'");
    }
  }

  std::optional<ckf::Partition> parse_partition() const {
    if (partition == "real") return std::nullopt;
    const double w = resolve_width();
    if (partition == "halfstars") {
      std::vector<double> labels;
      for (int k = 1; k <= 10; ++k) labels.push_back(0.5 * k);
      return ckf::build_partition(10, w, labels);
    }
    std::vector<std::string> parts;
    std::stringstream ss(partition);
    for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
    try {
      if (parts.size() == 2 && parts[0] == "stars") return ckf::build_partition(std::stoi(parts[1]), w);
      if (parts.size() == 4 && parts[0] == "grid") {
        const double low = std::stod(parts[1]), step = std::stod(parts[2]);
        const int m = std::stoi(parts[3]);
        if (!(step > 0.0)) throw ckf::ConfigError("grid step must be positive");
        std::vector<double> labels;
        for (int k = 0; k < m; ++k) labels.push_back(low + step * k);
        return ckf::build_partition(m, w, labels);
      }
    } catch (const std::logic_error&) {
    }
    throw ckf::ConfigError("bad --partition '" + partition + "'");
  }
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw ckf::Error("cannot write " + path.string());
  return os;
}

int cmd_fit(const ModelFlags& flags, const std::string& input, const std::string& out_dir, std::uint64_t warmup,
            double time_scale, std::size_t mc_samples, bool log_predictions, const std::string& resume,
            std::optional<std::uint64_t> stop_after) {
  const ckf::ModelConfig cfg = flags.build(ckf::DriftScope::shared, ckf::DriftScope::shared);
  const ckf::EventStream stream = ckf::ingest_file(input, cfg, time_scale);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  ckf::Session session = resume.empty() ? ckf::Session(cfg) : ckf::checkpoint_load(resume, cfg);

  std::ofstream drift_log = open_out(out / "drift.csv");
  ckf::write_drift_log_header(drift_log);
  std::optional<std::ofstream> pred_log;
  if (log_predictions) {
    pred_log.emplace(open_out(out / "predictions.csv"));
    ckf::write_prediction_log_header(*pred_log);
  }

  ckf::RunOptions opts;
  opts.warmup = warmup;
  opts.mc_samples = mc_samples;
  opts.mc_seed = cfg.seed;
  opts.drift_log = &drift_log;
  opts.prediction_log = pred_log ? &*pred_log : nullptr;
  if (stop_after) opts.stop_after = *stop_after;

  const ckf::MetricsReport report = ckf::run_online(session, stream, opts);
  {
    auto os = open_out(out / "metrics.txt");
    ckf::write_metrics(os, report);
  }
  {
    auto os = open_out(out / "bucket_rmse.csv");
    ckf::write_bucket_rmse(os, report);
  }
  ckf::checkpoint_save(session, (out / "ckpt").string());
  ckf::write_metrics(std::cout, report);
  return 0;
}

int cmd_track(const ModelFlags& flags, const std::string& input, const std::string& out_dir, std::uint64_t burn_in,
              double time_scale) {
  if (flags.partition != "real") throw ckf::ConfigError("track needs real-valued input (--partition real)");
  const ckf::ModelConfig cfg = flags.build(ckf::DriftScope::per_entity, ckf::DriftScope::shared);
  const ckf::EventStream stream = ckf::ingest_file(input, cfg, time_scale);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  ckf::Session session(cfg);
  std::ofstream drift_log = open_out(out / "drift.csv");
  ckf::write_drift_log_header(drift_log);
  const ckf::TrackingReport rep = ckf::run_tracking(session, stream, burn_in, &drift_log);

  {
    auto os = open_out(out / "tracking.csv");
    os << "t,row,predicted,observed,error,after_burn_in\n";
    for (const auto& p : rep.points) {
      os << ckf::detail::fmt_real(p.t) << ',' << session.keys.key(p.row) << ',' << ckf::detail::fmt_real(p.predicted)
         << ',' << ckf::detail::fmt_real(p.observed) << ',' << ckf::detail::fmt_real(p.predicted - p.observed) << ','
         << (p.after_burn_in ? 1 : 0) << '\n';
    }
  }
  {
    auto os = open_out(out / "error_hist.csv");
    os << "log2_bin,count\n";
    for (const auto& [bin, count] : rep.log2_histogram) os << bin << ',' << count << '\n';
  }
  std::ostringstream summary;
  summary << "median_abs_error = " << ckf::detail::fmt_real(rep.median_abs_error) << '\n'
          << "n_scored = " << rep.n_scored << '\n'
          << "n_events = " << rep.points.size() << '\n'
          << "n_exact = " << rep.n_exact << '\n';
  {
    auto os = open_out(out / "summary.txt");
    os << summary.str();
  }
  ckf::checkpoint_save(session, (out / "ckpt").string());
  std::cout << summary.str();
  return 0;
}

struct SynthFlags {
  int rows = 100;
  int cols = 50;
  int dim = 5;
  std::size_t events = 10000;
  double alpha_row = 0.0;
  double alpha_col = 0.0;
  std::vector<double> alternate;  // low,high,segment
  std::string mode = "ordinal";
  int classes = 5;
  double width = 1.0;
  double sigma = 1.0;
  double rate = 1.0;
  double latent_scale = 1.0;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthFlags& f, const std::string& out_dir) {
  ckf::SynthSpec spec;
  spec.n_rows = f.rows;
  spec.n_cols = f.cols;
  spec.latent_dim = f.dim;
  spec.n_events = f.events;
  spec.sigma = f.sigma;
  spec.rate_per_dyad = f.rate;
  spec.latent_scale = f.latent_scale;
  spec.row_schedule = {{0.0, f.alpha_row}};
  spec.col_schedule = {{0.0, f.alpha_col}};
  if (!f.alternate.empty()) {
    if (f.alternate.size() != 3 || !(f.alternate[2] > 0.0)) throw ckf::ConfigError("--alternate needs LOW,HIGH,SEGMENT");
    spec.row_schedule.clear();
    const double horizon = static_cast<double>(f.events) / (f.rate * f.rows * f.cols);
    const int segments = static_cast<int>(horizon / f.alternate[2]) + 2;
    spec.row_schedule = ckf::alternating_schedule(f.alternate[0], f.alternate[1], f.alternate[2], segments);
  }
  if (f.mode == "ordinal") {
    spec.partition = ckf::build_partition(f.classes, f.width);
  } else if (f.mode != "real") {
    throw ckf::ConfigError("--mode must be ordinal or real");
  }
  ModelFlags seed_source;
  seed_source.seed = f.seed;
  spec.seed = seed_source.resolve_seed();

  const ckf::SynthData data = ckf::generate(spec);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  {
    auto os = open_out(out / "events.csv");
    ckf::write_events_csv(os, data);
  }
  {
    auto os = open_out(out / "truth.csv");
    ckf::write_truth_csv(os, data);
  }
  std::cout << "events = " << data.events.size() << '\n';
  return 0;
}

int cmd_inspect(const std::string& path, std::size_t limit) {
  const auto bytes = ckf::read_file_bytes(path);
  const ckf::CheckpointHeader header = ckf::read_checkpoint_header(bytes);
  const ckf::ModelConfig cfg = ckf::ModelConfig::from_canonical(header.config_text);
  const ckf::Session s = ckf::deserialize_session(bytes, cfg);

  std::size_t n_rows = 0, n_cols = 0;
  for (const auto& [id, rec] : s.engine.store().records()) (id.side == ckf::Side::row ? n_rows : n_cols)++;
  std::cout << "format_version = " << header.version << '\n'
            << "fingerprint = " << header.fingerprint << '\n'
            << "events_done = " << s.events_done << '\n'
            << "row_entities = " << n_rows << '\n'
            << "column_entities = " << n_cols << '\n'
            << "drift_processes = " << s.engine.drifts().size() << '\n';
  std::cout << "[config]\n" << header.config_text;
  std::cout << "[drift]\n";
  for (const auto& [key, p] : s.engine.drifts()) {
    const std::string name = key.scope == ckf::DriftScope::shared ? ckf::to_string(key)
                                                                   : s.keys.key({key.side, key.index});
    std::cout << name << " a = " << ckf::detail::fmt_real(p.a) << " exp_a = " << ckf::detail::fmt_real(std::exp(p.a))
              << " updates = " << p.update_count << '\n';
  }
  std::cout << "[entities]\n";
  std::size_t shown = 0;
  for (const auto& [id, rec] : s.engine.store().records()) {
    if (shown++ == limit) {
      std::cout << "...\n";
      break;
    }
    const std::string name = id.index < s.keys.size(id.side) ? s.keys.key(id) : ckf::to_string(id);
    std::cout << ckf::to_string(id.side) << ' ' << name << " events = " << rec.event_count
              << " trace = " << ckf::detail::fmt_real(rec.belief.covariance.trace()) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collaborative Kalman filter for time-evolving dyadic data"};
  app.require_subcommand(1);

  ModelFlags fit_flags;
  std::string fit_input, fit_out = "ckf_out", resume;
  std::uint64_t warmup = 200;
  double fit_time_scale = 1.0;
  std::size_t mc_samples = 0;
  bool log_predictions = false;
  std::optional<std::uint64_t> stop_after;
  auto* fit = app.add_subcommand("fit", "prequential run over an event file");
  fit->add_option("--input", fit_input, "event file (row,col,t,value with header)")->required();
  fit->add_option("--out", fit_out, "output directory");
  fit->add_option("--warmup", warmup, "minimum previous events per entity before scoring");
  fit->add_option("--time-scale", fit_time_scale, "divide raw timestamps by this");
  fit->add_option("--mc-samples", mc_samples, "Monte Carlo samples per prediction (0: plug-in)");
  fit->add_flag("--log-predictions", log_predictions, "write predictions.csv");
  fit->add_option("--resume", resume, "continue from a checkpoint written with the same flags");
  fit->add_option("--stop-after", stop_after, "stop after this many events (absolute index)");
  fit_flags.add_to(*fit, true);

  ModelFlags track_flags;
  track_flags.dim = 5;
  track_flags.sigma = 0.01;
  track_flags.partition = "real";
  track_flags.drift = "gbm";
  track_flags.c_row = 0.05;
  track_flags.c_col = 0.0;
  std::string track_input, track_out = "ckf_track";
  std::uint64_t burn_in = 50;
  double track_time_scale = 1.0;
  auto* track = app.add_subcommand("track", "observed-value tracking against one shared column vector");
  track->add_option("--input", track_input, "series file (row,col,t,value with header)")->required();
  track->add_option("--out", track_out, "output directory");
  track->add_option("--burn-in", burn_in, "per-series events before errors are summarized");
  track->add_option("--time-scale", track_time_scale, "divide raw timestamps by this");
  track->add_option("--partition", track_flags.partition, "must be 'real'");
  track_flags.add_to(*track, false);

  SynthFlags synth_flags;
  std::string synth_out = "ckf_synth";
  auto* synth = app.add_subcommand("synth", "generate a synthetic event stream with ground truth");
  synth->add_option("--rows", synth_flags.rows)->check(CLI::PositiveNumber);
  synth->add_option("--cols", synth_flags.cols)->check(CLI::PositiveNumber);
  synth->add_option("--dim", synth_flags.dim)->check(CLI::PositiveNumber);
  synth->add_option("--events", synth_flags.events);
  synth->add_option("--alpha-row", synth_flags.alpha_row, "row drift per unit time");
  synth->add_option("--alpha-col", synth_flags.alpha_col, "column drift per unit time");
  synth->add_option("--alternate", synth_flags.alternate, "row drift alternating LOW,HIGH,SEGMENT")->delimiter(',');
  synth->add_option("--mode", synth_flags.mode, "ordinal | real");
  synth->add_option("--classes", synth_flags.classes);
  synth->add_option("--width", synth_flags.width);
  synth->add_option("--sigma", synth_flags.sigma);
  synth->add_option("--rate", synth_flags.rate, "arrivals per dyad per unit time");
  synth->add_option("--latent-scale", synth_flags.latent_scale);
  synth->add_option("--seed", synth_flags.seed);
  synth->add_option("--out", synth_out, "output directory");

  std::string ckpt_path;
  std::size_t limit = 20;
  auto* inspect = app.add_subcommand("inspect", "summarize a checkpoint");
  inspect->add_option("checkpoint", ckpt_path)->required();
  inspect->add_option("--limit", limit, "entities to list");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit) {
      return cmd_fit(fit_flags, fit_input, fit_out, warmup, fit_time_scale, mc_samples, log_predictions, resume,
                     stop_after);
    }
    if (*track) return cmd_track(track_flags, track_input, track_out, burn_in, track_time_scale);
    if (*synth) return cmd_synth(synth_flags, synth_out);
    if (*inspect) return cmd_inspect(ckpt_path, limit);
  } catch (const std::exception& e) {
    std::cerr << "ckf: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
