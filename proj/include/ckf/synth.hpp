#pragma once

// Synthetic streams drawn from the generative model, and the independent
// reference computations (classical Kalman recursion, quadrature, finite
// differences) the tests check the engine against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ckf/belief.hpp"
#include "ckf/config.hpp"
#include "ckf/probit.hpp"

namespace ckf {

/// alpha(t) = alpha on [start, next segment's start).
struct DriftSegment {
  Time start = 0.0;
  double alpha = 0.0;
};

using DriftSchedule = std::vector<DriftSegment>;

/// Integral of a piecewise-constant schedule over [t0, t1].
inline double integrated_drift(const DriftSchedule& schedule, Time t0, Time t1) {
  double total = 0.0;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const double lo = std::max(t0, schedule[i].start);
    const double hi = std::min(t1, i + 1 < schedule.size() ? schedule[i + 1].start : kInf);
    if (hi > lo) total += schedule[i].alpha * (hi - lo);
  }
  return total;
}

/// Schedule alternating between two rates in segments of equal length.
inline DriftSchedule alternating_schedule(double first, double second, Time segment, int segments) {
  DriftSchedule s;
  for (int i = 0; i < segments; ++i) s.push_back({i * segment, i % 2 == 0 ? first : second});
  return s;
}

struct SynthSpec {
  int n_rows = 10;
  int n_cols = 10;
  int latent_dim = 5;
  DriftSchedule row_schedule{{0.0, 0.0}};
  DriftSchedule col_schedule{{0.0, 0.0}};
  std::optional<Partition> partition;  // nullopt: real-valued readout
  double sigma = 1.0;
  std::size_t n_events = 1000;
  double rate_per_dyad = 1.0;  // Poisson arrivals per dyad per unit time
  double latent_scale = 1.0;   // initial latent coordinates ~ N(0, scale^2)
  std::uint64_t seed = 0;
};

struct SynthEvent {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  Time t = 0.0;
  double value = 0.0;     // label (ordinal) or noisy readout (real)
  double true_dot = 0.0;  // <u, w> at t
};

struct LatentSnapshot {
  EntityId id;
  Time t = 0.0;
  Vector latent;
};

struct SynthData {
  std::vector<SynthEvent> events;
  std::vector<LatentSnapshot> truth;  // both entities, at every event time
};

inline SynthData generate(const SynthSpec& spec) {
  if (spec.n_rows < 1 || spec.n_cols < 1 || spec.latent_dim < 1 || !(spec.rate_per_dyad > 0.0) ||
      !(spec.sigma > 0.0)) {
    throw ConfigError("synth: sizes, rate and sigma must be positive");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;
  const auto d = spec.latent_dim;

  auto init = [&](int n) {
    std::vector<Vector> v(static_cast<std::size_t>(n), Vector(d));
    for (auto& x : v)
      for (int i = 0; i < d; ++i) x[i] = spec.latent_scale * normal(rng);
    return v;
  };
  std::vector<Vector> rows = init(spec.n_rows);
  std::vector<Vector> cols = init(spec.n_cols);
  std::vector<Time> row_time(rows.size(), 0.0), col_time(cols.size(), 0.0);

  std::exponential_distribution<double> gap(spec.rate_per_dyad * spec.n_rows * spec.n_cols);
  std::uniform_int_distribution<int> pick_row(0, spec.n_rows - 1), pick_col(0, spec.n_cols - 1);

  auto advance = [&](Vector& x, Time& last, Time t, const DriftSchedule& schedule) {
    const double var = integrated_drift(schedule, last, t);
    if (var > 0.0) {
      const double sd = std::sqrt(var);
      for (int i = 0; i < d; ++i) x[i] += sd * normal(rng);
    }
    last = t;
  };

  SynthData out;
  out.events.reserve(spec.n_events);
  Time t = 0.0;
  for (std::size_t n = 0; n < spec.n_events; ++n) {
    t += gap(rng);
    const auto i = static_cast<std::size_t>(pick_row(rng));
    const auto j = static_cast<std::size_t>(pick_col(rng));
    advance(rows[i], row_time[i], t, spec.row_schedule);
    advance(cols[j], col_time[j], t, spec.col_schedule);
    const double dot = rows[i].dot(cols[j]);
    const double y = dot + spec.sigma * normal(rng);
    SynthEvent ev{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), t, y, dot};
    if (spec.partition) ev.value = spec.partition->label(spec.partition->class_of(y));
    out.events.push_back(ev);
    out.truth.push_back({{Side::row, ev.row}, t, rows[i]});
    out.truth.push_back({{Side::column, ev.col}, t, cols[j]});
  }
  return out;
}

/// Writes events in the stream ingest format (keys r<i> / c<j>).
inline void write_events_csv(std::ostream& os, const SynthData& data) {
  os << "row,col,t,value\n";
  char buf[128];
  for (const auto& e : data.events) {
    std::snprintf(buf, sizeof buf, "r%u,c%u,%.17g,%.17g\n", e.row, e.col, e.t, e.value);
    os << buf;
  }
}

inline void write_truth_csv(std::ostream& os, const SynthData& data) {
  os << "t,side,index";
  if (!data.truth.empty())
    for (Eigen::Index i = 0; i < data.truth.front().latent.size(); ++i) os << ",x" << i;
  os << '\n';
  char buf[64];
  for (const auto& s : data.truth) {
    std::snprintf(buf, sizeof buf, "%.17g", s.t);
    os << buf << ',' << to_string(s.id.side) << ',' << s.id.index;
    for (Eigen::Index i = 0; i < s.latent.size(); ++i) {
      std::snprintf(buf, sizeof buf, ",%.17g", s.latent[i]);
      os << buf;
    }
    os << '\n';
  }
}

struct KalmanStep {
  Time t = 0.0;
  double y = 0.0;
};

struct KalmanPosterior {
  Vector mean;
  Matrix covariance;
};

/// Classical forward recursion with a fixed known design row A:
///   B_n = alpha dt_n I + Sigma_n,
///   Sigma_{n+1} = (A^T A / sigma^2 + B_n^{-1})^{-1},
///   mu_{n+1} = Sigma_{n+1} (A^T y / sigma^2 + B_n^{-1} mu_n).
inline std::vector<KalmanPosterior> kalman_reference(const std::vector<KalmanStep>& series, const Vector& design,
                                                     double sigma, double alpha, const Vector& mu0,
                                                     const Matrix& sigma0, Time t0) {
  const auto d = design.size();
  const Matrix ata = design * design.transpose();
  const Matrix eye = Matrix::Identity(d, d);
  Vector mu = mu0;
  Matrix cov = sigma0;
  Time last = t0;
  std::vector<KalmanPosterior> out;
  out.reserve(series.size());
  for (const auto& step : series) {
    const Matrix b_inv = (alpha * (step.t - last) * eye + cov).inverse();
    cov = (ata / (sigma * sigma) + b_inv).inverse();
    mu = cov * (design * step.y / (sigma * sigma) + b_inv * mu);
    last = step.t;
    out.push_back({mu, cov});
  }
  return out;
}

/// Normalizer (order 0) or mean (order 1) of N(center, sigma^2) restricted to
/// (l, r), by adaptive Gauss-Kronrod quadrature.
///
/// The integrand is rescaled by exp(s^2/2), s the bound nearest the center,
/// so far-tail cells keep full relative precision in the mean; the order-0
/// result is scaled back and may legitimately underflow.
inline double quad_trunc_moment(double center, double sigma, double l, double r, int order) {
  if (!(l < r)) throw ConfigError("quad_trunc_moment: need l < r");
  using boost::math::quadrature::gauss_kronrod;
  double a = (l - center) / sigma;
  double b = (r - center) / sigma;
  double s = 0.0;
  if (a > 0.0) s = a;
  if (b < 0.0) s = b;
  // The density is below exp(-800) relative to its peak beyond 40 units.
  a = std::max(a, s - 40.0);
  b = std::min(b, s + 40.0);
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  auto density = [&](double x) { return norm * std::exp(-0.5 * (x - s) * (x + s)); };

  constexpr unsigned kDepth = 20;
  constexpr double kTol = 1e-10;
  // Split at the scaling point so the peak is an endpoint of a panel.
  auto integrate = [&](auto&& f) {
    if (a < s && s < b) {
      return gauss_kronrod<double, 61>::integrate(f, a, s, kDepth, kTol) +
             gauss_kronrod<double, 61>::integrate(f, s, b, kDepth, kTol);
    }
    return gauss_kronrod<double, 61>::integrate(f, a, b, kDepth, kTol);
  };
  const double z = integrate(density);
  if (order == 0) return z * std::exp(-0.5 * s * s);
  const double first = integrate([&](double x) { return (x - s) * density(x); });
  return center + sigma * (s + first / z);
}

struct FiniteDiff {
  double f1 = 0.0;
  double f2 = 0.0;
};

/// Central first and second differences with step h.
inline FiniteDiff fd_derivatives(const std::function<double(double)>& fn, double x, double h) {
  const double fp = fn(x + h);
  const double f0 = fn(x);
  const double fm = fn(x - h);
  return {(fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h)};
}

}  // namespace ckf
