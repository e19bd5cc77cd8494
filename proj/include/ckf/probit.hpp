#pragma once

// Ordered-probit partitions and the truncated-normal quantities the
// variational updates need.  Everything here is a pure function.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ckf/errors.hpp"

namespace ckf {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// One-based ordinal class index.
struct ClassLabel {
  int k = 1;
  auto operator<=>(const ClassLabel&) const = default;
};

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Upper-tail Mills ratio R(x) = (1 - Phi(x)) / phi(x), for x >= 0.
///
/// Below 6 the erfc form is accurate to a few ulps.  Above it the
/// continued fraction R = 1/(x + 1/(x + 2/(x + 3/(x + ...)))) converges in
/// a handful of terms and never under- or overflows.
inline double mills_ratio(double x) {
  if (x == kInf) return 0.0;
  if (x < 6.0) {
    return 0.5 * std::erfc(x / std::numbers::sqrt2) / normal_pdf(x);
  }
  double t = x;
  for (int k = 60; k >= 1; --k) t = x + k / t;
  return 1.0 / t;
}

namespace detail {

// (phi(a) - phi(b)) / (Phi(b) - Phi(a)) and log(Phi(b) - Phi(a)) for
// 0 <= a < b <= inf, written in terms of Mills ratios so that neither
// factor underflows in the upper tail.
struct UpperTail {
  double ratio;
  double log_mass;
};

inline UpperTail upper_tail(double a, double b) {
  const double ra = mills_ratio(a);
  double num = 1.0;
  double den = ra;
  if (b != kInf) {
    const double delta = 0.5 * (b - a) * (b + a);
    const double e = std::exp(-delta);
    num = -std::expm1(-delta);
    den = ra - mills_ratio(b) * e;
  }
  const double log_phi_a = -0.5 * a * a - 0.5 * std::log(2.0 * std::numbers::pi);
  return {num / den, log_phi_a + std::log(den)};
}

}  // namespace detail

/// log(Phi(beta) - Phi(alpha)) for standardized bounds alpha < beta.
inline double log_interval_mass(double alpha, double beta) {
  if (alpha >= 0.0) return detail::upper_tail(alpha, beta).log_mass;
  if (beta <= 0.0) return detail::upper_tail(-beta, -alpha).log_mass;
  return std::log(normal_cdf(beta) - normal_cdf(alpha));
}

inline double interval_mass(double alpha, double beta) {
  return std::exp(log_interval_mass(alpha, beta));
}

/// Mean of N(center, sigma^2) truncated to (l, r).
///
/// Same-sign bounds go through the Mills-ratio form; bounds that straddle
/// the center use the direct pdf/cdf expression, which has no cancellation
/// there.  The result is clamped into [l, r].
inline double trunc_norm_mean(double center, double sigma, double l, double r) {
  if (!(l < r)) throw ConfigError("trunc_norm_mean: need l < r");
  if (!(sigma > 0.0)) throw ConfigError("trunc_norm_mean: need sigma > 0");
  const double alpha = (l - center) / sigma;
  const double beta = (r - center) / sigma;

  double shift;
  if (beta - alpha < 1e-7) {
    // Narrow cell: density is nearly linear across it.
    const double mid = 0.5 * (alpha + beta);
    const double w = beta - alpha;
    shift = mid - mid * w * w / 12.0;
  } else if (alpha >= 0.0) {
    shift = detail::upper_tail(alpha, beta).ratio;
  } else if (beta <= 0.0) {
    shift = -detail::upper_tail(-beta, -alpha).ratio;
  } else {
    const double pa = alpha == -kInf ? 0.0 : normal_pdf(alpha);
    const double pb = beta == kInf ? 0.0 : normal_pdf(beta);
    shift = (pa - pb) / (normal_cdf(beta) - normal_cdf(alpha));
  }
  return std::clamp(center + sigma * shift, l, r);
}

/// Ordered class cells (b_{k-1}, b_k] tiling the real line, with the
/// observable label attached to each cell.
class Partition {
public:
  Partition() = default;

  Partition(std::vector<double> boundaries, std::vector<double> labels)
      : boundaries_(std::move(boundaries)), labels_(std::move(labels)) {
    if (labels_.size() != boundaries_.size() + 1) {
      throw ConfigError("partition: need exactly one more label than boundaries");
    }
    for (std::size_t i = 1; i < boundaries_.size(); ++i) {
      if (!(boundaries_[i - 1] < boundaries_[i])) {
        throw ConfigError("partition: boundaries must be strictly increasing");
      }
    }
    for (std::size_t i = 1; i < labels_.size(); ++i) {
      if (!(labels_[i - 1] < labels_[i])) {
        throw ConfigError("partition: labels must be strictly increasing");
      }
    }
    for (double b : boundaries_) {
      if (!std::isfinite(b)) throw ConfigError("partition: boundaries must be finite");
    }
  }

  int num_classes() const { return static_cast<int>(labels_.size()); }
  std::span<const double> boundaries() const { return boundaries_; }
  std::span<const double> labels() const { return labels_; }

  double lower(ClassLabel c) const {
    return c.k <= 1 ? -kInf : boundaries_[static_cast<std::size_t>(c.k - 2)];
  }
  double upper(ClassLabel c) const {
    return c.k >= num_classes() ? kInf : boundaries_[static_cast<std::size_t>(c.k - 1)];
  }
  double label(ClassLabel c) const { return labels_.at(static_cast<std::size_t>(c.k - 1)); }

  bool contains(ClassLabel c) const { return c.k >= 1 && c.k <= num_classes(); }

  /// Class whose right-closed cell holds y.
  ClassLabel class_of(double y) const {
    // First boundary >= y; a value equal to b_k stays in class k.
    const auto it = std::lower_bound(boundaries_.begin(), boundaries_.end(), y);
    return {static_cast<int>(it - boundaries_.begin()) + 1};
  }

  /// Class whose label is within tol of value, if any.
  std::optional<ClassLabel> class_for_label(double value, double tol = 1e-9) const {
    const auto it = std::lower_bound(labels_.begin(), labels_.end(), value - tol);
    if (it != labels_.end() && std::abs(*it - value) <= tol) {
      return ClassLabel{static_cast<int>(it - labels_.begin()) + 1};
    }
    return std::nullopt;
  }

  bool operator==(const Partition&) const = default;

private:
  std::vector<double> boundaries_;
  std::vector<double> labels_;
};

/// m classes of equal finite width, centered at zero: b_k = width*(k - m/2).
/// Labels default to 1..m.
inline Partition build_partition(int m, double width, std::vector<double> labels = {}) {
  if (m < 2) throw ConfigError("partition: need at least two classes");
  if (!(width > 0.0) || !std::isfinite(width)) throw ConfigError("partition: width must be positive");
  std::vector<double> bounds;
  bounds.reserve(static_cast<std::size_t>(m - 1));
  for (int k = 1; k < m; ++k) bounds.push_back(width * (k - 0.5 * m));
  if (labels.empty()) {
    for (int k = 1; k <= m; ++k) labels.push_back(k);
  }
  return Partition(std::move(bounds), std::move(labels));
}

inline ClassLabel class_of(const Partition& p, double y) { return p.class_of(y); }

/// P(z = k) when the latent y ~ N(mean_dot, sigma^2).
inline double class_prob(double mean_dot, double sigma, const Partition& p, ClassLabel k) {
  const double alpha = (p.lower(k) - mean_dot) / sigma;
  const double beta = (p.upper(k) - mean_dot) / sigma;
  return interval_mass(alpha, beta);
}

inline std::vector<double> class_probs(double mean_dot, double sigma, const Partition& p) {
  std::vector<double> out(static_cast<std::size_t>(p.num_classes()));
  for (int k = 1; k <= p.num_classes(); ++k) out[static_cast<std::size_t>(k - 1)] = class_prob(mean_dot, sigma, p, {k});
  return out;
}

}  // namespace ckf
