#pragma once

// Per-entity Gaussian beliefs and the posterior -> prior transition under
// Brownian drift.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ckf/config.hpp"
#include "ckf/errors.hpp"

namespace ckf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct GaussianBelief {
  Vector mean;
  Matrix covariance;
  Time last_time = 0.0;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// Fresh belief: mean ~ N(0, init_scale^2 I) from `rng`, covariance I.
inline GaussianBelief init_belief(const ModelConfig& config, std::mt19937_64& rng, Time t) {
  GaussianBelief b;
  b.mean.resize(config.latent_dim);
  std::normal_distribution<double> normal(0.0, config.init_scale);
  for (int i = 0; i < config.latent_dim; ++i) b.mean[i] = normal(rng);
  b.covariance = Matrix::Identity(config.latent_dim, config.latent_dim);
  b.last_time = t;
  return b;
}

/// Prior at time t: covariance grows by drift_rate * (t - last_time) on the
/// diagonal; the mean is unchanged.
inline GaussianBelief propagate_rate(const GaussianBelief& b, double drift_rate, Time t) {
  if (t < b.last_time) {
    throw TimeOrderError("propagate: time " + std::to_string(t) + " precedes last update " +
                         std::to_string(b.last_time));
  }
  GaussianBelief out = b;
  const double add = drift_rate * (t - b.last_time);
  if (add > 0.0) out.covariance.diagonal().array() += add;
  out.last_time = t;
  return out;
}

/// Prior at time t for drift e^{log_drift} per unit time.
inline GaussianBelief propagate(const GaussianBelief& b, double log_drift, Time t) {
  return propagate_rate(b, std::exp(log_drift), t);
}

/// Mode-aware propagation: none leaves the covariance alone, fixed uses the
/// configured alpha, gbm uses e^{log_drift}.
inline GaussianBelief propagate(const GaussianBelief& b, double log_drift, Time t, const ModelConfig& config) {
  switch (config.drift_mode) {
    case DriftMode::none: return propagate_rate(b, 0.0, t);
    case DriftMode::fixed: return propagate_rate(b, config.fixed_alpha, t);
    case DriftMode::gbm: return propagate(b, log_drift, t);
  }
  return b;
}

inline void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

inline double relative_asymmetry(const Matrix& m) {
  const double scale = m.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

/// Symmetrize and, if the factorization or the diagonal says conditioning has
/// degraded, lift every eigenvalue to at least `floor`.
inline void condition_covariance(Matrix& cov, double floor) {
  symmetrize(cov);
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success && cov.diagonal().minCoeff() > floor) return;
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Vector vals = es.eigenvalues().cwiseMax(floor);
  cov = es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
  symmetrize(cov);
}

struct EntityRecord {
  GaussianBelief belief;
  std::uint64_t event_count = 0;
  bool clamped = false;  // known vector: zero covariance, never updated
};

/// One record per entity.  Single writer; iteration order is by EntityId.
class BeliefStore {
public:
  using Map = std::map<EntityId, EntityRecord>;

  bool contains(EntityId id) const { return records_.count(id) != 0; }

  const EntityRecord& at(EntityId id) const {
    auto it = records_.find(id);
    if (it == records_.end()) throw Error("unknown entity " + to_string(id));
    return it->second;
  }
  EntityRecord& at(EntityId id) {
    auto it = records_.find(id);
    if (it == records_.end()) throw Error("unknown entity " + to_string(id));
    return it->second;
  }

  const GaussianBelief& belief(EntityId id) const { return at(id).belief; }

  const GaussianBelief& create(EntityId id, const ModelConfig& config, std::mt19937_64& rng, Time t) {
    if (contains(id)) throw Error("entity " + to_string(id) + " already exists");
    auto& rec = records_[id];
    rec.belief = init_belief(config, rng, t);
    return rec.belief;
  }

  /// Pin an entity to a known vector.
  void clamp(EntityId id, const Vector& mean, Time t) {
    auto& rec = records_[id];
    rec.belief.mean = mean;
    rec.belief.covariance = Matrix::Zero(mean.size(), mean.size());
    rec.belief.last_time = t;
    rec.clamped = true;
  }

  /// Replace the stored belief; rejects asymmetric or non-PD covariances.
  void commit(EntityId id, const GaussianBelief& b) {
    validate(b);
    auto& rec = records_[id];
    if (rec.clamped) throw InvariantError("entity " + to_string(id) + " is clamped");
    rec.belief = b;
  }

  /// Insert a record verbatim (checkpoint restore).
  void restore(EntityId id, EntityRecord rec) { records_[id] = std::move(rec); }

  static void validate(const GaussianBelief& b) {
    const auto d = b.mean.size();
    if (d < 1 || b.covariance.rows() != d || b.covariance.cols() != d) {
      throw InvariantError("belief dimensions inconsistent");
    }
    if (!b.mean.allFinite() || !b.covariance.allFinite()) throw InvariantError("belief has non-finite entries");
    const double asym = relative_asymmetry(b.covariance);
    if (asym > 1e-12) throw InvariantError("covariance not symmetric (relative asymmetry " + std::to_string(asym) + ")");
    Eigen::LLT<Matrix> llt(b.covariance);
    if (llt.info() != Eigen::Success) throw InvariantError("covariance not positive definite");
  }

  std::size_t size() const { return records_.size(); }
  const Map& records() const { return records_; }

private:
  Map records_;
};

inline void commit_posterior(BeliefStore& store, EntityId id, const GaussianBelief& b) { store.commit(id, b); }

}  // namespace ckf
