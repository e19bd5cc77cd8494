#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "ckf/belief.hpp"
#include "ckf/probit.hpp"

namespace ckf {

struct ClassDistribution {
  std::vector<double> probs;
  std::vector<double> labels;
};

/// Class probabilities at the plug-in dot product of the means.
inline ClassDistribution predict_plugin(const GaussianBelief& q_u, const GaussianBelief& q_w,
                                        const Partition& partition, double sigma) {
  const auto labels = partition.labels();
  return {class_probs(q_u.mean.dot(q_w.mean), sigma, partition), {labels.begin(), labels.end()}};
}

namespace detail {

// Square root factor L with L L^T = cov; PSD (including all-zero) allowed.
inline Matrix sampling_factor(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace detail

/// Monte Carlo average of class probabilities over S joint draws of (u, w).
/// Each draw contributes its exact probit class probabilities rather than a
/// sampled y.
inline ClassDistribution predict_mc(const GaussianBelief& q_u, const GaussianBelief& q_w, const Partition& partition,
                                    double sigma, std::size_t samples, std::mt19937_64& rng) {
  if (samples == 0) throw ConfigError("predict_mc: need at least one sample");
  const Matrix lu = detail::sampling_factor(q_u.covariance);
  const Matrix lw = detail::sampling_factor(q_w.covariance);
  const auto d = q_u.mean.size();
  std::normal_distribution<double> normal;
  Vector zu(d), zw(d);

  ClassDistribution out;
  out.labels.assign(partition.labels().begin(), partition.labels().end());
  out.probs.assign(out.labels.size(), 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    for (Eigen::Index i = 0; i < d; ++i) zu[i] = normal(rng);
    for (Eigen::Index i = 0; i < d; ++i) zw[i] = normal(rng);
    const Vector u = q_u.mean + lu * zu;
    const Vector w = q_w.mean + lw * zw;
    const auto p = class_probs(u.dot(w), sigma, partition);
    for (std::size_t k = 0; k < p.size(); ++k) out.probs[k] += p[k];
  }
  for (double& p : out.probs) p /= static_cast<double>(samples);
  return out;
}

inline double expected_rating(const ClassDistribution& dist) {
  double r = 0.0;
  for (std::size_t k = 0; k < dist.probs.size(); ++k) r += dist.labels[k] * dist.probs[k];
  return r;
}

}  // namespace ckf
