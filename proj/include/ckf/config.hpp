#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ckf/errors.hpp"
#include "ckf/probit.hpp"

namespace ckf {

/// Model time in user-declared units (days, trading sessions, ...).
using Time = double;

enum class Side : std::uint8_t { row = 0, column = 1 };

inline const char* to_string(Side s) { return s == Side::row ? "row" : "column"; }

struct EntityId {
  Side side = Side::row;
  std::uint32_t index = 0;
  auto operator<=>(const EntityId&) const = default;
};

inline std::string to_string(EntityId id) {
  return std::string(id.side == Side::row ? "r" : "c") + std::to_string(id.index);
}

enum class DriftMode : std::uint8_t { none = 0, fixed = 1, gbm = 2 };
enum class DriftScope : std::uint8_t { per_entity = 0, shared = 1 };

inline const char* to_string(DriftMode m) {
  switch (m) {
    case DriftMode::none: return "none";
    case DriftMode::fixed: return "fixed";
    case DriftMode::gbm: return "gbm";
  }
  return "?";
}

inline const char* to_string(DriftScope s) { return s == DriftScope::shared ? "shared" : "per-entity"; }

struct ModelConfig {
  int latent_dim = 10;
  double obs_sigma = 1.0;

  DriftMode drift_mode = DriftMode::gbm;
  double fixed_alpha = 0.0;  // drift per unit time in fixed mode
  double c_row = 0.0;        // Brownian variance rate of the row log-drift
  double c_col = 0.0;
  DriftScope row_scope = DriftScope::shared;
  DriftScope col_scope = DriftScope::shared;
  double initial_log_drift = -4.6;

  /// nullopt: real-valued observations (y observed directly).
  std::optional<Partition> partition;

  int iters = 5;
  double tol = 1e-6;  // early exit on max-norm mean movement between sweeps
  std::uint64_t seed = 0;
  double init_scale = 1.0;
  double eig_floor = 1e-10;

  bool ordinal() const { return partition.has_value(); }

  double c_for(Side s) const { return s == Side::row ? c_row : c_col; }
  DriftScope scope_for(Side s) const { return s == Side::row ? row_scope : col_scope; }

  void validate() const {
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (!(obs_sigma > 0.0) || !std::isfinite(obs_sigma)) throw ConfigError("obs_sigma must be > 0");
    if (iters < 1) throw ConfigError("iters must be >= 1");
    if (!(c_row >= 0.0) || !(c_col >= 0.0)) throw ConfigError("drift variance rates must be >= 0");
    if (drift_mode == DriftMode::fixed && !(fixed_alpha >= 0.0)) throw ConfigError("fixed drift must be >= 0");
    if (!std::isfinite(initial_log_drift)) throw ConfigError("initial log drift must be finite");
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be > 0");
    if (!(tol >= 0.0)) throw ConfigError("tol must be >= 0");
  }

  /// Canonical text form; every field at round-trip precision.  Used for
  /// checkpoint fingerprints, so field order must stay fixed.
  std::string canonical() const {
    std::ostringstream os;
    auto num = [&](const char* key, double v) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << key << '=' << buf << '\n';
    };
    os << "latent_dim=" << latent_dim << '\n';
    num("obs_sigma", obs_sigma);
    os << "drift_mode=" << to_string(drift_mode) << '\n';
    num("fixed_alpha", fixed_alpha);
    num("c_row", c_row);
    num("c_col", c_col);
    os << "row_scope=" << to_string(row_scope) << '\n';
    os << "col_scope=" << to_string(col_scope) << '\n';
    num("initial_log_drift", initial_log_drift);
    if (partition) {
      os << "partition.boundaries=";
      for (double b : partition->boundaries()) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g,", b);
        os << buf;
      }
      os << "\npartition.labels=";
      for (double l : partition->labels()) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g,", l);
        os << buf;
      }
      os << '\n';
    } else {
      os << "partition=real\n";
    }
    os << "iters=" << iters << '\n';
    num("tol", tol);
    os << "seed=" << seed << '\n';
    num("init_scale", init_scale);
    num("eig_floor", eig_floor);
    return os.str();
  }

  /// Inverse of canonical().
  static ModelConfig from_canonical(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    std::vector<double> bounds, labels;
    bool real = false;
    auto reals = [](const std::string& v) {
      std::vector<double> out;
      std::istringstream vs(v);
      std::string item;
      while (std::getline(vs, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
      }
      return out;
    };
    auto mode = [](const std::string& v) {
      if (v == "none") return DriftMode::none;
      if (v == "fixed") return DriftMode::fixed;
      if (v == "gbm") return DriftMode::gbm;
      throw ConfigError("unknown drift mode '" + v + "'");
    };
    auto scope = [](const std::string& v) {
      if (v == "shared") return DriftScope::shared;
      if (v == "per-entity") return DriftScope::per_entity;
      throw ConfigError("unknown drift scope '" + v + "'");
    };
    try {
      while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "latent_dim") c.latent_dim = std::stoi(val);
        else if (key == "obs_sigma") c.obs_sigma = std::stod(val);
        else if (key == "drift_mode") c.drift_mode = mode(val);
        else if (key == "fixed_alpha") c.fixed_alpha = std::stod(val);
        else if (key == "c_row") c.c_row = std::stod(val);
        else if (key == "c_col") c.c_col = std::stod(val);
        else if (key == "row_scope") c.row_scope = scope(val);
        else if (key == "col_scope") c.col_scope = scope(val);
        else if (key == "initial_log_drift") c.initial_log_drift = std::stod(val);
        else if (key == "partition.boundaries") bounds = reals(val);
        else if (key == "partition.labels") labels = reals(val);
        else if (key == "partition") real = true;
        else if (key == "iters") c.iters = std::stoi(val);
        else if (key == "tol") c.tol = std::stod(val);
        else if (key == "seed") c.seed = std::stoull(val);
        else if (key == "init_scale") c.init_scale = std::stod(val);
        else if (key == "eig_floor") c.eig_floor = std::stod(val);
        else throw ConfigError("unknown config key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("malformed config text");
    }
    if (!real) c.partition = Partition(std::move(bounds), std::move(labels));
    return c;
  }
};

}  // namespace ckf
