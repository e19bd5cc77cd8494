#pragma once

// Per-event mean-field coordinate ascent over q(y) q(u) q(w), followed by
// the log-drift Newton steps, for one dyad observed at time t.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>

#include "ckf/belief.hpp"
#include "ckf/config.hpp"
#include "ckf/drift.hpp"
#include "ckf/probit.hpp"

namespace ckf {

/// An ordinal class (probit mode) or a directly observed real value.
using Observation = std::variant<ClassLabel, double>;

struct DyadEvent {
  EntityId row;
  EntityId col{Side::column, 0};
  Time t = 0.0;
  Observation obs = 0.0;
};

struct QState {
  GaussianBelief q_u;
  GaussianBelief q_w;
  double ey = 0.0;    // E_q[y]
  double m_ij = 0.0;  // location parameter of q(y)
  bool u_clamped = false;
  bool w_clamped = false;
};

struct EventDiagnostics {
  std::vector<double> elbo_trace;
  int iterations_run = 0;
  bool converged = false;
};

namespace detail {

inline Matrix spd_inverse(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw InvariantError("covariance inversion failed (not positive definite)");
  return llt.solve(Matrix::Identity(m.rows(), m.cols()));
}

// Gaussian update of `target` given the partner's q and E[y].
inline GaussianBelief gaussian_update(const GaussianBelief& prior, const GaussianBelief& partner, double ey,
                                      double sigma) {
  const double inv_var = 1.0 / (sigma * sigma);
  const Matrix prior_prec = spd_inverse(prior.covariance);
  Matrix prec = prior_prec;
  prec.noalias() += inv_var * (partner.mean * partner.mean.transpose() + partner.covariance);
  GaussianBelief out;
  out.covariance = spd_inverse(prec);
  out.mean = out.covariance * (ey * inv_var * partner.mean + prior_prec * prior.mean);
  out.last_time = prior.last_time;
  return out;
}

inline double log_det_spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw InvariantError("log-determinant of non-PD matrix");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// E_q[ln N(x | prior)] + H[q].
inline double gaussian_terms(const GaussianBelief& q, const GaussianBelief& prior) {
  const Eigen::LLT<Matrix> llt(prior.covariance);
  if (llt.info() != Eigen::Success) throw InvariantError("prior covariance not positive definite");
  const Vector diff = q.mean - prior.mean;
  const double quad = diff.dot(llt.solve(diff));
  const double trace = llt.solve(q.covariance).trace();
  const double d = static_cast<double>(q.mean.size());
  const double cross = -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det_spd(prior.covariance) + trace + quad);
  const double entropy = 0.5 * (d * (1.0 + std::log(2.0 * std::numbers::pi)) + log_det_spd(q.covariance));
  return cross + entropy;
}

// E_q[<u, w>^2] under independent Gaussians.
inline double expected_dot_sq(const GaussianBelief& u, const GaussianBelief& w) {
  const double md = u.mean.dot(w.mean);
  return md * md + u.mean.dot(w.covariance * u.mean) + w.mean.dot(u.covariance * w.mean) +
         (u.covariance.cwiseProduct(w.covariance.transpose())).sum();
}

}  // namespace detail

/// q(y) is N(m_ij, sigma^2) truncated to the class cell of z, with
/// m_ij = <E u, E w>.
inline QState update_q_y(QState q, const Partition& partition, double sigma, ClassLabel z) {
  q.m_ij = q.q_u.mean.dot(q.q_w.mean);
  q.ey = trunc_norm_mean(q.m_ij, sigma, partition.lower(z), partition.upper(z));
  return q;
}

inline QState update_q_u(QState q, const GaussianBelief& prior_u, double sigma) {
  q.q_u = detail::gaussian_update(prior_u, q.q_w, q.ey, sigma);
  return q;
}

inline QState update_q_w(QState q, const GaussianBelief& prior_w, double sigma) {
  q.q_w = detail::gaussian_update(prior_w, q.q_u, q.ey, sigma);
  return q;
}

/// Closed-form per-event objective E_q[ln p(z, u, w, y)] - E_q[ln q].
///
/// Ordinal: the y terms collapse to ln Z(m) - (E(y - u.w)^2 - E(y - m)^2)/(2 sigma^2)
/// with Z the probit mass of the observed cell.  Clamped sides contribute
/// nothing (point mass equal to its prior).
inline double compute_elbo(const QState& q, const GaussianBelief& prior_u, const GaussianBelief& prior_w,
                           const Partition* partition, double sigma, const Observation& obs) {
  const double var = sigma * sigma;
  const double e_dot_sq = detail::expected_dot_sq(q.q_u, q.q_w);
  const double mean_dot = q.q_u.mean.dot(q.q_w.mean);

  double l = 0.0;
  if (const auto* z = std::get_if<ClassLabel>(&obs)) {
    if (partition == nullptr) throw ConfigError("ordinal observation without a partition");
    const double alpha = (partition->lower(*z) - q.m_ij) / sigma;
    const double beta = (partition->upper(*z) - q.m_ij) / sigma;
    l += log_interval_mass(alpha, beta);
    l -= (e_dot_sq - 2.0 * q.ey * (mean_dot - q.m_ij) - q.m_ij * q.m_ij) / (2.0 * var);
  } else {
    const double y = std::get<double>(obs);
    l -= 0.5 * std::log(2.0 * std::numbers::pi * var);
    l -= (y * y - 2.0 * y * mean_dot + e_dot_sq) / (2.0 * var);
  }
  if (!q.u_clamped) l += detail::gaussian_terms(q.q_u, prior_u);
  if (!q.w_clamped) l += detail::gaussian_terms(q.q_w, prior_w);
  return l;
}

inline constexpr double kMinLogDrift = -30.0;
inline constexpr double kMaxLogDrift = 10.0;

/// Identifies a drift process: one per side when shared, else one per entity.
struct DriftKey {
  DriftScope scope = DriftScope::shared;
  Side side = Side::row;
  std::uint32_t index = 0;
  auto operator<=>(const DriftKey&) const = default;
};

inline std::string to_string(const DriftKey& k) {
  if (k.scope == DriftScope::shared) return std::string(to_string(k.side)) + ":*";
  return to_string(EntityId{k.side, k.index});
}

using DriftObserver = std::function<void(const DriftKey&, Time, const DriftProcess&)>;

/// Holds every belief and drift process and applies events in order.
class Engine {
public:
  explicit Engine(ModelConfig config) : config_(std::move(config)), rng_(config_.seed) { config_.validate(); }

  const ModelConfig& config() const { return config_; }
  const BeliefStore& store() const { return store_; }
  BeliefStore& store() { return store_; }
  const std::map<DriftKey, DriftProcess>& drifts() const { return drifts_; }
  std::map<DriftKey, DriftProcess>& drifts() { return drifts_; }
  std::mt19937_64& rng() { return rng_; }
  const std::mt19937_64& rng() const { return rng_; }

  void set_drift_observer(DriftObserver obs) { observer_ = std::move(obs); }

  DriftKey drift_key(EntityId id) const {
    if (config_.scope_for(id.side) == DriftScope::shared) return {DriftScope::shared, id.side, 0};
    return {DriftScope::per_entity, id.side, id.index};
  }

  /// Creates the entity (and its drift process) at time t if absent.
  const EntityRecord& ensure_entity(EntityId id, Time t) {
    if (!store_.contains(id)) {
      store_.create(id, config_, rng_, t);
      if (config_.drift_mode == DriftMode::gbm) process_for(id);
    }
    return store_.at(id);
  }

  void clamp_entity(EntityId id, const Vector& mean, Time t) {
    if (mean.size() != config_.latent_dim) throw ConfigError("clamped vector has wrong dimension");
    store_.clamp(id, mean, t);
  }

  void set_belief(EntityId id, const GaussianBelief& b) {
    if (b.dim() != config_.latent_dim) throw ConfigError("belief has wrong dimension");
    if (!store_.contains(id)) ensure_entity(id, b.last_time);
    store_.commit(id, b);
  }

  double log_drift(EntityId id) const {
    auto it = drifts_.find(drift_key(id));
    return it == drifts_.end() ? config_.initial_log_drift : it->second.a;
  }

  /// Prior for an existing entity at time t (no state change).
  GaussianBelief prior_at(EntityId id, Time t) const {
    const auto& rec = store_.at(id);
    if (rec.clamped) return rec.belief;
    return propagate(rec.belief, log_drift(id), t, config_);
  }

  EventDiagnostics process_event(const DyadEvent& ev) {
    if (ev.row.side != Side::row || ev.col.side != Side::column) throw ConfigError("event sides are swapped");
    if (!std::isfinite(ev.t)) throw ConfigError("event time must be finite");
    const bool ordinal_obs = std::holds_alternative<ClassLabel>(ev.obs);
    if (ordinal_obs != config_.ordinal()) {
      throw ConfigError(ordinal_obs ? "ordinal event in real-valued mode" : "real-valued event in ordinal mode");
    }
    if (ordinal_obs && !config_.partition->contains(std::get<ClassLabel>(ev.obs))) {
      throw ConfigError("class label out of range");
    }
    for (EntityId id : {ev.row, ev.col}) {
      if (store_.contains(id) && ev.t < store_.at(id).belief.last_time) {
        throw TimeOrderError("event at t=" + std::to_string(ev.t) + " precedes last update of " + to_string(id));
      }
    }
    ensure_entity(ev.row, ev.t);
    ensure_entity(ev.col, ev.t);

    SideWork u = begin_side(ev.row, ev.t);
    SideWork w = begin_side(ev.col, ev.t);
    const double sigma = config_.obs_sigma;
    const Partition* partition = config_.ordinal() ? &*config_.partition : nullptr;

    QState q;
    q.q_u = u.prior;
    q.q_w = w.prior;
    q.u_clamped = u.clamped;
    q.w_clamped = w.clamped;
    if (!ordinal_obs) q.ey = std::get<double>(ev.obs);

    EventDiagnostics diag;
    for (int it = 0; it < config_.iters; ++it) {
      const Vector last_u = q.q_u.mean;
      const Vector last_w = q.q_w.mean;
      if (ordinal_obs) q = update_q_y(q, *partition, sigma, std::get<ClassLabel>(ev.obs));
      if (!u.clamped) q = update_q_u(q, u.prior, sigma);
      if (!w.clamped) q = update_q_w(q, w.prior, sigma);
      if (u.cache) drift_step(u, q.q_u, ev.t);
      if (w.cache) drift_step(w, q.q_w, ev.t);

      diag.elbo_trace.push_back(compute_elbo(q, u.prior, w.prior, partition, sigma, ev.obs) + drift_prior(u) +
                                drift_prior(w));
      diag.iterations_run = it + 1;
      const double moved =
          std::max((q.q_u.mean - last_u).lpNorm<Eigen::Infinity>(), (q.q_w.mean - last_w).lpNorm<Eigen::Infinity>());
      if (moved < config_.tol) {
        diag.converged = true;
        break;
      }
    }

    finish_side(u, q.q_u, ev.t);
    finish_side(w, q.q_w, ev.t);
    return diag;
  }

private:
  struct SideWork {
    EntityId id;
    bool clamped = false;
    GaussianBelief prev;
    GaussianBelief prior;
    double dt = 0.0;
    DriftProcess* proc = nullptr;
    double a = 0.0;
    double a_anchor = 0.0;
    double c = 0.0;
    double dt_a = 0.0;
    double history_at_anchor = 0.0;
    std::optional<EigenCache> cache;  // set iff the drift is updated this event
  };

  DriftProcess& process_for(EntityId id) {
    const DriftKey key = drift_key(id);
    auto it = drifts_.find(key);
    if (it == drifts_.end()) {
      DriftProcess p;
      p.a = config_.initial_log_drift;
      p.c = config_.c_for(id.side);
      it = drifts_.emplace(key, p).first;
    }
    return it->second;
  }

  SideWork begin_side(EntityId id, Time t) {
    SideWork s;
    s.id = id;
    const auto& rec = store_.at(id);
    s.clamped = rec.clamped;
    s.prev = rec.belief;
    s.dt = t - rec.belief.last_time;
    if (s.clamped) {
      s.prior = rec.belief;
      return s;
    }
    if (config_.drift_mode == DriftMode::gbm) {
      s.proc = &process_for(id);
      s.a = s.a_anchor = s.proc->a;
      s.c = s.proc->c;
      s.dt_a = s.proc->started() ? t - s.proc->last_time : 0.0;
    }
    s.prior = propagate(s.prev, s.a, t, config_);
    const bool pinned_by_prior = s.c > 0.0 && !(s.dt_a > 0.0);
    if (s.proc != nullptr && s.dt > 0.0 && !pinned_by_prior) {
      s.cache = build_eigen_cache(s.prev, s.prior, s.prior.mean, s.dt);
      if (s.cache && !(s.c > 0.0)) s.history_at_anchor = s.proc->history.value(s.a_anchor);
    }
    return s;
  }

  // One safeguarded Newton step on the log drift, then re-propagate.  With
  // c == 0 the objective also carries every earlier event's likelihood term.
  void drift_step(SideWork& s, const GaussianBelief& posterior, Time t) {
    EigenCache& cache = *s.cache;
    cache.refresh(posterior, s.prior.mean);
    const auto objective = [&](double a) {
      return drift_objective(a, cache, s.a_anchor, s.c, s.dt_a) + history_term(s, a);
    };
    DriftDerivatives der = drift_derivatives(s.a, cache, s.a_anchor, s.c, s.dt_a);
    if (!(s.c > 0.0)) {
      const DriftDerivatives past = s.proc->history.derivatives(s.a);
      der.f1 += past.f1;
      der.f2 += past.f2;
    }
    double target = drift_newton_step(s.a, der.f1, der.f2);
    if (!(der.f2 < kDriftCurvatureGuard) && der.f1 != 0.0) target = s.a + std::copysign(kDriftMaxStep, der.f1);
    target = std::clamp(target, s.a - kDriftMaxStep, s.a + kDriftMaxStep);
    double step = std::clamp(target, kMinLogDrift, kMaxLogDrift) - s.a;
    const double f0 = objective(s.a);
    int halvings = 0;
    while (step != 0.0 && objective(s.a + step) < f0) {
      step *= 0.5;
      if (++halvings > 40) step = 0.0;
    }
    s.a += step;
    s.prior = propagate(s.prev, s.a, t);
  }

  // Earlier events' terms relative to the value at the anchor.
  static double history_term(const SideWork& s, double a) {
    if (s.c > 0.0 || s.proc->history.bins.empty()) return 0.0;
    return s.proc->history.value(a) - s.history_at_anchor;
  }

  double drift_prior(const SideWork& s) const {
    if (!s.cache) return 0.0;
    if (!(s.c > 0.0)) return history_term(s, s.a);
    if (!(s.dt_a > 0.0)) return 0.0;
    return -(s.a - s.a_anchor) * (s.a - s.a_anchor) / (2.0 * s.c * s.dt_a);
  }

  void finish_side(SideWork& s, GaussianBelief posterior, Time t) {
    auto& rec = store_.at(s.id);
    ++rec.event_count;
    if (s.clamped) return;
    condition_covariance(posterior.covariance, config_.eig_floor);
    posterior.last_time = t;
    store_.commit(s.id, posterior);
    if (s.proc == nullptr) return;
    if (s.cache) {
      s.proc->a = s.a;
      if (!(s.c > 0.0)) s.proc->history.add(*s.cache);
      s.proc->last_time = t;
      ++s.proc->update_count;
      if (observer_) observer_(drift_key(s.id), t, *s.proc);
    } else if (!s.proc->started()) {
      s.proc->last_time = t;
    }
  }

  ModelConfig config_;
  BeliefStore store_;
  std::map<DriftKey, DriftProcess> drifts_;
  std::mt19937_64 rng_;
  DriftObserver observer_;
};

/// Free-function form over an engine.
inline EventDiagnostics process_event(Engine& engine, const DyadEvent& event) { return engine.process_event(event); }

}  // namespace ckf
