#pragma once

// Point estimation of the log-drift a(t) of a geometric Brownian motion
// alpha(t) = e^{a(t)}, one Newton step on a second-order expansion of
//   f(a) = E_q[ln p(u(t) | a)] + ln p(a | a_prev)
// per coordinate sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ckf/belief.hpp"
#include "ckf/config.hpp"

namespace ckf {


/// Eigendecomposition of the previous posterior covariance, plus the
/// current posterior projected onto its eigenbasis.
struct EigenCache {
  Vector eigvals;  // lambda_d
  Matrix eigvecs;  // Q, columns orthonormal
  Vector v;        // Q^T (mu'(t) - mu(t))
  Vector m_diag;   // diag(Q^T Sigma'(t) Q)
  double dt = 0.0;

  /// Recompute v and diag(M) after q(u) moves.  Only the diagonal of M
  /// enters the objective.
  void refresh(const GaussianBelief& curr_posterior, const Vector& prior_mean) {
    v = eigvecs.transpose() * (curr_posterior.mean - prior_mean);
    m_diag = (eigvecs.transpose() * curr_posterior.covariance * eigvecs).diagonal();
  }
};

/// nullopt when the decomposition fails; the caller then skips the drift
/// update for this event.
inline std::optional<EigenCache> build_eigen_cache(const GaussianBelief& prev_posterior,
                                                   const GaussianBelief& curr_posterior, const Vector& prior_mean,
                                                   double dt) {
  if (!(dt > 0.0)) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Matrix> es(prev_posterior.covariance);
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0)) return std::nullopt;
  EigenCache cache;
  cache.eigvals = es.eigenvalues();
  cache.eigvecs = es.eigenvectors();
  cache.dt = dt;
  cache.refresh(curr_posterior, prior_mean);
  return cache;
}

namespace detail {

inline bool prior_active(double c, double dt_a) { return c > 0.0 && dt_a > 0.0 && std::isfinite(c); }

}  // namespace detail

/// f(a) up to an additive constant.  The Brownian prior on a is dropped when
/// c == 0 (or dt_a == 0).
inline double drift_objective(double a, const EigenCache& cache, double a_prev, double c, double dt_a) {
  const double s = std::exp(a) * cache.dt;
  double f = 0.0;
  for (Eigen::Index d = 0; d < cache.eigvals.size(); ++d) {
    const double denom = cache.eigvals[d] + s;
    const double k = cache.v[d] * cache.v[d] + cache.m_diag[d];
    f -= 0.5 * (std::log(denom) + k / denom);
  }
  if (detail::prior_active(c, dt_a)) f -= (a - a_prev) * (a - a_prev) / (2.0 * c * dt_a);
  return f;
}

struct DriftDerivatives {
  double f1 = 0.0;
  double f2 = 0.0;
};

inline DriftDerivatives drift_derivatives(double a, const EigenCache& cache, double a_prev, double c, double dt_a) {
  const double s = std::exp(a) * cache.dt;
  DriftDerivatives out;
  for (Eigen::Index d = 0; d < cache.eigvals.size(); ++d) {
    const double denom = cache.eigvals[d] + s;
    const double eta = s / denom;
    const double ratio = (cache.v[d] * cache.v[d] + cache.m_diag[d]) / denom;
    out.f1 -= 0.5 * eta * (1.0 - ratio);
    out.f2 += -0.5 * eta * (1.0 - eta) + 0.5 * eta * (1.0 - 2.0 * eta) * ratio;
  }
  if (detail::prior_active(c, dt_a)) {
    out.f1 -= (a - a_prev) / (c * dt_a);
    out.f2 -= 1.0 / (c * dt_a);
  }
  return out;
}

inline constexpr double kDriftMaxStep = 1.0;
inline constexpr double kDriftCurvatureGuard = -1e-8;

/// a - f1/f2 when the expansion is concave; otherwise no movement.  The
/// per-event limit kDriftMaxStep is applied by the caller.
inline double drift_newton_step(double a_eval, double f1, double f2) {
  if (!(f2 < kDriftCurvatureGuard)) return a_eval;
  return a_eval - f1 / f2;
}

/// Every past likelihood term -1/2 [ln(lambda + e^a dt) + K / (lambda + e^a dt)]
/// equals, up to a constant, -1/2 [ln(1 + x) + kappa / (1 + x)] with
/// x = e^(a - l), l = ln(lambda / dt) and kappa = K / lambda.  Binning l keeps
/// the whole history as a function of a in O(bins) memory.
struct DriftHistory {
  static constexpr double kBinWidth = 0.1;
  static constexpr int kMaxBin = 800;  // |l| <= 80

  struct Bin {
    int index = 0;
    double count = 0.0;
    double kappa = 0.0;
    double scale = 1.0;  // e^(-l) at the bin center
    bool operator==(const Bin& o) const { return index == o.index && count == o.count && kappa == o.kappa; }
  };
  std::vector<Bin> bins;  // sorted by index

  static int bin_of(double l) {
    const double idx = std::round(l / kBinWidth);
    return static_cast<int>(std::clamp(idx, -static_cast<double>(kMaxBin), static_cast<double>(kMaxBin)));
  }

  Bin& bin(int index) {
    auto it = std::lower_bound(bins.begin(), bins.end(), index, [](const Bin& b, int i) { return b.index < i; });
    if (it == bins.end() || it->index != index) {
      it = bins.insert(it, Bin{index, 0.0, 0.0, std::exp(-index * kBinWidth)});
    }
    return *it;
  }

  void add(const EigenCache& cache) {
    for (Eigen::Index d = 0; d < cache.eigvals.size(); ++d) {
      const double lambda = cache.eigvals[d];
      Bin& b = bin(bin_of(std::log(lambda / cache.dt)));
      b.count += 1.0;
      b.kappa += (cache.v[d] * cache.v[d] + cache.m_diag[d]) / lambda;
    }
  }

  double value(double a) const {
    const double ea = std::exp(a);
    double f = 0.0;
    for (const Bin& b : bins) {
      const double x = ea * b.scale;
      f -= 0.5 * (b.count * std::log1p(x) + b.kappa / (1.0 + x));
    }
    return f;
  }

  DriftDerivatives derivatives(double a) const {
    const double ea = std::exp(a);
    DriftDerivatives out;
    for (const Bin& b : bins) {
      const double x = ea * b.scale;
      const double eta = x / (1.0 + x);
      const double g = eta * (1.0 - eta);
      out.f1 -= 0.5 * (b.count * eta - b.kappa * g);
      out.f2 -= 0.5 * (b.count * g - b.kappa * g * (1.0 - 2.0 * eta));
    }
    return out;
  }

  bool operator==(const DriftHistory&) const = default;
};

struct DriftProcess {
  double a = 0.0;                                          // log drift
  double c = 0.0;                                          // variance rate of a
  Time last_time = std::numeric_limits<double>::quiet_NaN();  // NaN until first event
  std::uint64_t update_count = 0;
  DriftHistory history;  // past likelihood terms, used when c == 0

  double rate() const { return std::exp(a); }
  bool started() const { return !std::isnan(last_time); }
};

/// Sum likelihood contributions of several entities sharing one process,
/// then add the Brownian prior once.
inline DriftDerivatives shared_drift_accumulate(std::span<const DriftDerivatives> contributions, double a = 0.0,
                                                double a_prev = 0.0, double c = 0.0, double dt_a = 0.0) {
  DriftDerivatives out;
  if (contributions.empty()) return out;
  for (const auto& d : contributions) {
    out.f1 += d.f1;
    out.f2 += d.f2;
  }
  if (detail::prior_active(c, dt_a)) {
    out.f1 -= (a - a_prev) / (c * dt_a);
    out.f2 -= 1.0 / (c * dt_a);
  }
  return out;
}

}  // namespace ckf
