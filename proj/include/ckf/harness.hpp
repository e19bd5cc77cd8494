#pragma once

// Event ingest, prequential (predict-then-update) driving of the engine,
// and online metrics.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ckf/config.hpp"
#include "ckf/errors.hpp"
#include "ckf/inference.hpp"
#include "ckf/prediction.hpp"

namespace ckf {

struct EventRecord {
  std::string row_key;
  std::string col_key;
  Time t = 0.0;
  double value = 0.0;
};

/// Interns external string keys to dense per-side indices.
class KeyRegistry {
public:
  EntityId intern(Side side, const std::string& key) {
    auto& map = maps_[static_cast<std::size_t>(side)];
    auto& keys = keys_[static_cast<std::size_t>(side)];
    auto [it, inserted] = map.try_emplace(key, static_cast<std::uint32_t>(keys.size()));
    if (inserted) keys.push_back(key);
    return {side, it->second};
  }

  std::optional<EntityId> find(Side side, const std::string& key) const {
    const auto& map = maps_[static_cast<std::size_t>(side)];
    auto it = map.find(key);
    if (it == map.end()) return std::nullopt;
    return EntityId{side, it->second};
  }

  const std::string& key(EntityId id) const { return keys_[static_cast<std::size_t>(id.side)].at(id.index); }
  const std::vector<std::string>& keys(Side side) const { return keys_[static_cast<std::size_t>(side)]; }
  std::size_t size(Side side) const { return keys_[static_cast<std::size_t>(side)].size(); }

  bool operator==(const KeyRegistry& o) const { return keys_ == o.keys_; }

private:
  std::array<std::unordered_map<std::string, std::uint32_t>, 2> maps_;
  std::array<std::vector<std::string>, 2> keys_;
};

struct EventStream {
  std::vector<DyadEvent> events;
  std::vector<double> values;  // observed value per event, in event order
  KeyRegistry keys;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

inline double parse_real(std::string_view field, std::size_t line, const char* what) {
  field = trim(field);
  double v = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(line, std::string("bad ") + what + " '" + std::string(field) + "'");
  if (!std::isfinite(v)) throw ParseError(line, std::string(what) + " must be finite");
  return v;
}

}  // namespace detail

/// Parses `row,col,t,value` lines (comma or tab separated) after a header.
inline std::vector<EventRecord> read_records(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header line");
  const char delim = line.find('\t') != std::string::npos ? '\t' : ',';
  std::vector<EventRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view text = detail::trim(line);
    if (text.empty()) continue;
    std::array<std::string_view, 4> fields;
    std::size_t n = 0, start = 0;
    while (true) {
      const auto pos = text.find(delim, start);
      if (n == fields.size()) throw ParseError(lineno, "too many fields");
      fields[n++] = text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    if (n != 4) throw ParseError(lineno, "expected 4 fields (row, col, t, value)");
    EventRecord rec;
    rec.row_key = std::string(detail::trim(fields[0]));
    rec.col_key = std::string(detail::trim(fields[1]));
    if (rec.row_key.empty() || rec.col_key.empty()) throw ParseError(lineno, "empty entity key");
    rec.t = detail::parse_real(fields[2], lineno, "timestamp");
    rec.value = detail::parse_real(fields[3], lineno, "value");
    out.push_back(std::move(rec));
  }
  return out;
}

/// Sorts by time (stable), interns keys in that order, and maps values to
/// classes in ordinal mode.  time_scale divides raw timestamps.
inline EventStream ingest(std::vector<EventRecord> records, const ModelConfig& config, double time_scale = 1.0) {
  if (!(time_scale > 0.0)) throw ConfigError("time scale must be positive");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return records[a].t < records[b].t; });

  EventStream s;
  s.events.reserve(records.size());
  s.values.reserve(records.size());
  for (std::size_t i : order) {
    const auto& r = records[i];
    DyadEvent ev;
    ev.row = s.keys.intern(Side::row, r.row_key);
    ev.col = s.keys.intern(Side::column, r.col_key);
    ev.t = r.t / time_scale;
    if (config.ordinal()) {
      const auto k = config.partition->class_for_label(r.value);
      if (!k) throw ParseError(i + 2, "value " + std::to_string(r.value) + " is not a class label");
      ev.obs = *k;
    } else {
      ev.obs = r.value;
    }
    s.events.push_back(ev);
    s.values.push_back(r.value);
  }
  return s;
}

inline EventStream ingest(std::istream& in, const ModelConfig& config, double time_scale = 1.0) {
  return ingest(read_records(in), config, time_scale);
}

inline EventStream ingest_file(const std::string& path, const ModelConfig& config, double time_scale = 1.0) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return ingest(in, config, time_scale);
}

/// Both entities have at least `threshold` previous events.
inline bool warmup_gate(std::uint64_t row_count, std::uint64_t col_count, std::uint64_t threshold) {
  return row_count >= threshold && col_count >= threshold;
}

inline constexpr std::size_t kBuckets = 21;  // counts 0,10,...,190, then 200+

inline std::size_t count_bucket(std::uint64_t count) { return std::min<std::size_t>(count / 10, kBuckets - 1); }

struct MetricsReport {
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double mae = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t n_scored = 0;
  std::uint64_t n_skipped_warmup = 0;
  /// Entry (m, n): RMSE over all predictions whose row had >= 10m and column
  /// >= 10n previous events (last index: 200+).  NaN where empty.
  std::vector<std::vector<double>> bucket_rmse;
};

/// Running error sums; the state that a checkpoint must carry.
struct MetricsAccumulator {
  double sum_sq = 0.0;
  double sum_abs = 0.0;
  std::uint64_t n_scored = 0;
  std::uint64_t n_skipped = 0;
  std::array<std::array<double, kBuckets>, kBuckets> bucket_sq{};
  std::array<std::array<std::uint64_t, kBuckets>, kBuckets> bucket_n{};

  void add(double err, bool scored, std::uint64_t row_count, std::uint64_t col_count) {
    const auto br = count_bucket(row_count), bc = count_bucket(col_count);
    bucket_sq[br][bc] += err * err;
    ++bucket_n[br][bc];
    if (scored) {
      sum_sq += err * err;
      sum_abs += std::abs(err);
      ++n_scored;
    } else {
      ++n_skipped;
    }
  }

  MetricsReport report() const {
    MetricsReport r;
    r.n_scored = n_scored;
    r.n_skipped_warmup = n_skipped;
    if (n_scored > 0) {
      r.rmse = std::sqrt(sum_sq / static_cast<double>(n_scored));
      r.mae = sum_abs / static_cast<double>(n_scored);
    }
    // Suffix sums turn exact buckets into "at least" thresholds.
    std::vector<std::vector<double>> sq(kBuckets + 1, std::vector<double>(kBuckets + 1, 0.0));
    std::vector<std::vector<double>> cnt(kBuckets + 1, std::vector<double>(kBuckets + 1, 0.0));
    for (std::size_t i = kBuckets; i-- > 0;) {
      for (std::size_t j = kBuckets; j-- > 0;) {
        sq[i][j] = bucket_sq[i][j] + sq[i + 1][j] + sq[i][j + 1] - sq[i + 1][j + 1];
        cnt[i][j] = static_cast<double>(bucket_n[i][j]) + cnt[i + 1][j] + cnt[i][j + 1] - cnt[i + 1][j + 1];
      }
    }
    r.bucket_rmse.assign(kBuckets, std::vector<double>(kBuckets, std::numeric_limits<double>::quiet_NaN()));
    for (std::size_t i = 0; i < kBuckets; ++i)
      for (std::size_t j = 0; j < kBuckets; ++j)
        if (cnt[i][j] > 0.0) r.bucket_rmse[i][j] = std::sqrt(sq[i][j] / cnt[i][j]);
    return r;
  }

  bool operator==(const MetricsAccumulator&) const = default;
};

namespace detail {

inline std::string fmt_real(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// `key = value` lines in fixed order.
inline void write_metrics(std::ostream& os, const MetricsReport& r) {
  os << "rmse = " << detail::fmt_real(r.rmse) << '\n';
  os << "mae = " << detail::fmt_real(r.mae) << '\n';
  os << "n_scored = " << r.n_scored << '\n';
  os << "n_skipped_warmup = " << r.n_skipped_warmup << '\n';
  os << "n_events = " << r.n_scored + r.n_skipped_warmup << '\n';
}

/// Cumulative bucket matrix; rows are row-entity thresholds.
inline void write_bucket_rmse(std::ostream& os, const MetricsReport& r) {
  os << "row_min";
  for (std::size_t j = 0; j < kBuckets; ++j) os << ",col_min_" << j * 10;
  os << '\n';
  for (std::size_t i = 0; i < r.bucket_rmse.size(); ++i) {
    os << i * 10;
    for (double v : r.bucket_rmse[i]) os << ',' << detail::fmt_real(v);
    os << '\n';
  }
}

/// Engine plus everything a prequential run accumulates; checkpoints
/// serialize exactly this.
struct Session {
  explicit Session(ModelConfig config) : engine(std::move(config)) {}

  Engine engine;
  KeyRegistry keys;
  MetricsAccumulator metrics;
  std::uint64_t events_done = 0;
};

struct RunOptions {
  std::uint64_t warmup = 200;
  std::size_t mc_samples = 0;  // 0: plug-in prediction
  std::uint64_t mc_seed = 0;
  std::uint64_t stop_after = std::numeric_limits<std::uint64_t>::max();  // absolute event index
  std::ostream* prediction_log = nullptr;
  std::ostream* drift_log = nullptr;
};

/// Point prediction for an event from the state before it is applied.
inline double predict_value(Engine& engine, const DyadEvent& ev, std::size_t mc_samples, std::mt19937_64& mc_rng) {
  engine.ensure_entity(ev.row, ev.t);
  engine.ensure_entity(ev.col, ev.t);
  const auto& cfg = engine.config();
  const GaussianBelief u = engine.prior_at(ev.row, ev.t);
  const GaussianBelief w = engine.prior_at(ev.col, ev.t);
  if (!cfg.ordinal()) return u.mean.dot(w.mean);
  if (mc_samples > 0) return expected_rating(predict_mc(u, w, *cfg.partition, cfg.obs_sigma, mc_samples, mc_rng));
  return expected_rating(predict_plugin(u, w, *cfg.partition, cfg.obs_sigma));
}

namespace detail {

class DriftLogScope {
public:
  DriftLogScope(Engine& engine, std::ostream* os, const KeyRegistry& keys) : engine_(engine) {
    if (os == nullptr) return;
    engine_.set_drift_observer([os, &keys](const DriftKey& k, Time t, const DriftProcess& p) {
      const std::string name = k.scope == DriftScope::shared ? to_string(k) : keys.key({k.side, k.index});
      *os << name << ',' << fmt_real(t) << ',' << fmt_real(p.a) << ',' << fmt_real(std::exp(p.a)) << '\n';
    });
  }
  ~DriftLogScope() { engine_.set_drift_observer(nullptr); }
  DriftLogScope(const DriftLogScope&) = delete;
  DriftLogScope& operator=(const DriftLogScope&) = delete;

private:
  Engine& engine_;
};

}  // namespace detail

inline void write_prediction_log_header(std::ostream& os) { os << "t,row,col,predicted,observed,scored\n"; }
inline void write_drift_log_header(std::ostream& os) { os << "process,t,a,exp_a\n"; }

/// Predict, score (if both entities pass warm-up), then update, for each
/// event from session.events_done up to opts.stop_after.
inline MetricsReport run_online(Session& session, const EventStream& stream, const RunOptions& opts = {}) {
  if (session.events_done == 0 && session.keys.size(Side::row) == 0 && session.keys.size(Side::column) == 0) {
    session.keys = stream.keys;
  } else if (!(session.keys == stream.keys)) {
    throw CheckpointError("stream entity keys do not match the session");
  }
  Engine& engine = session.engine;
  detail::DriftLogScope drift_scope(engine, opts.drift_log, session.keys);
  std::mt19937_64 mc_rng(opts.mc_seed);

  const auto end = std::min<std::uint64_t>(stream.events.size(), opts.stop_after);
  for (auto n = session.events_done; n < end; ++n) {
    const DyadEvent& ev = stream.events[n];
    const double predicted = predict_value(engine, ev, opts.mc_samples, mc_rng);
    const double observed = stream.values[n];
    const auto rc = engine.store().at(ev.row).event_count;
    const auto cc = engine.store().at(ev.col).event_count;
    const bool scored = warmup_gate(rc, cc, opts.warmup);
    session.metrics.add(predicted - observed, scored, rc, cc);
    if (opts.prediction_log != nullptr) {
      *opts.prediction_log << detail::fmt_real(ev.t) << ',' << session.keys.key(ev.row) << ','
                           << session.keys.key(ev.col) << ',' << detail::fmt_real(predicted) << ','
                           << detail::fmt_real(observed) << ',' << (scored ? 1 : 0) << '\n';
    }
    engine.process_event(ev);
    session.events_done = n + 1;
  }
  return session.metrics.report();
}

inline MetricsReport run_online(const EventStream& stream, const ModelConfig& config, const RunOptions& opts = {}) {
  Session session(config);
  return run_online(session, stream, opts);
}

struct TrackingPoint {
  Time t = 0.0;
  EntityId row;
  double predicted = 0.0;
  double observed = 0.0;
  bool after_burn_in = false;
};

struct TrackingReport {
  std::vector<TrackingPoint> points;
  double median_abs_error = std::numeric_limits<double>::quiet_NaN();  // after burn-in
  std::uint64_t n_scored = 0;
  std::map<int, std::uint64_t> log2_histogram;  // floor(log2 |err|) -> count, after burn-in
  std::uint64_t n_exact = 0;                    // after burn-in errors that were exactly 0
};

/// Observed-y run against a single shared column (state-of-the-world)
/// vector.  burn_in counts events per row entity.
inline TrackingReport run_tracking(Session& session, const EventStream& stream, std::uint64_t burn_in = 50,
                                   std::ostream* drift_log = nullptr) {
  if (session.engine.config().ordinal()) throw ConfigError("tracking needs real-valued observations");
  if (stream.keys.size(Side::column) > 1) {
    throw ConfigError("tracking mode allows one column entity, found " + std::to_string(stream.keys.size(Side::column)));
  }
  session.keys = stream.keys;
  Engine& engine = session.engine;
  detail::DriftLogScope drift_scope(engine, drift_log, session.keys);
  std::mt19937_64 unused(0);

  TrackingReport rep;
  std::vector<double> abs_err;
  for (std::size_t n = session.events_done; n < stream.events.size(); ++n) {
    const DyadEvent& ev = stream.events[n];
    TrackingPoint p;
    p.t = ev.t;
    p.row = ev.row;
    p.predicted = predict_value(engine, ev, 0, unused);
    p.observed = stream.values[n];
    p.after_burn_in = engine.store().at(ev.row).event_count >= burn_in;
    if (p.after_burn_in) {
      const double e = std::abs(p.predicted - p.observed);
      abs_err.push_back(e);
      if (e > 0.0) {
        ++rep.log2_histogram[static_cast<int>(std::floor(std::log2(e)))];
      } else {
        ++rep.n_exact;
      }
    }
    rep.points.push_back(p);
    engine.process_event(ev);
    session.events_done = n + 1;
  }
  rep.n_scored = abs_err.size();
  if (!abs_err.empty()) {
    const auto mid = abs_err.begin() + static_cast<std::ptrdiff_t>(abs_err.size() / 2);
    std::nth_element(abs_err.begin(), mid, abs_err.end());
    double med = *mid;
    if (abs_err.size() % 2 == 0) med = 0.5 * (med + *std::max_element(abs_err.begin(), mid));
    rep.median_abs_error = med;
  }
  return rep;
}

inline TrackingReport run_tracking(const EventStream& stream, const ModelConfig& config, std::uint64_t burn_in = 50,
                                   std::ostream* drift_log = nullptr) {
  Session session(config);
  return run_tracking(session, stream, burn_in, drift_log);
}

}  // namespace ckf
