#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "ckf/inference.hpp"
#include "ckf/synth.hpp"

namespace ckf {
namespace {

GaussianBelief scalar(double mean, double var, Time t = 0.0) {
  return {Vector::Constant(1, mean), Matrix::Constant(1, 1, var), t};
}

TEST(UpdateQY, Examples) {
  QState q;
  q.q_u = scalar(1.0, 1.0);
  q.q_w = scalar(0.5, 1.0);
  const Partition bin = build_partition(2, 1.0);
  // m_ij = 0.5 sits at the center of (0, 1] when the cell is symmetric about it.
  const Partition mid({0.0, 1.0}, {1, 2, 3});
  EXPECT_NEAR(update_q_y(q, mid, 1.0, {2}).ey, 0.5, 1e-15);

  q.q_u = scalar(0.0, 1.0);
  EXPECT_NEAR(update_q_y(q, bin, 1.0, {2}).ey, 0.7978845608028654, 1e-14);
  EXPECT_EQ(update_q_y(q, bin, 1.0, {2}).m_ij, 0.0);
}

TEST(UpdateQU, FlatLikelihoodKeepsPrior) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  QState q;
  q.q_u = {Vector::Zero(3), Matrix::Identity(3, 3), 0.0};
  q.q_w = {Vector::Ones(3), Matrix::Identity(3, 3), 0.0};
  q.ey = 2.0;
  GaussianBelief prior{Vector(Vector::LinSpaced(3, -1.0, 1.0)), 2.0 * Matrix::Identity(3, 3), 0.0};
  const auto out = update_q_u(q, prior, 1e9);
  EXPECT_LT((out.q_u.mean - prior.mean).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(UpdateQU, ScalarConjugateRegression) {
  QState q;
  q.q_u = scalar(0.0, 1.0);
  q.q_w = scalar(2.0, 0.0);
  q.ey = 4.0;
  const auto out = update_q_u(q, scalar(0.0, 1.0), 1.0);
  EXPECT_NEAR(out.q_u.mean[0], 8.0 / 5.0, 1e-15);
  EXPECT_NEAR(out.q_u.covariance(0, 0), 1.0 / 5.0, 1e-15);
}

TEST(UpdateQW, MirrorsUpdateQU) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + trial % 5;
    Matrix a = Matrix::Random(d, d), b = Matrix::Random(d, d);
    GaussianBelief pu{Vector::Random(d), a * a.transpose() + 0.1 * Matrix::Identity(d, d), 0.0};
    GaussianBelief pw{Vector::Random(d), b * b.transpose() + 0.1 * Matrix::Identity(d, d), 0.0};
    QState q;
    q.q_u = pu;
    q.q_w = pw;
    q.ey = 0.7;
    QState swapped = q;
    std::swap(swapped.q_u, swapped.q_w);
    const auto via_u = update_q_u(q, pu, 1.3);
    const auto via_w = update_q_w(swapped, pu, 1.3);
    EXPECT_EQ(via_u.q_u.mean, via_w.q_w.mean);
    EXPECT_EQ(via_u.q_u.covariance, via_w.q_w.covariance);
  }
}

TEST(UpdateQW, RepeatedObservationsTrackTarget) {
  // d = 1, u fixed at 2, y = 3 each time with sigma = 0.01: w -> 1.5.
  ModelConfig cfg;
  cfg.latent_dim = 1;
  cfg.obs_sigma = 0.01;
  cfg.drift_mode = DriftMode::fixed;
  cfg.fixed_alpha = 1e-4;
  Engine engine(cfg);
  const EntityId row{Side::row, 0}, col{Side::column, 0};
  engine.clamp_entity(row, Vector::Constant(1, 2.0), 0.0);
  for (int i = 1; i <= 50; ++i) engine.process_event({row, col, static_cast<double>(i), 3.0});
  EXPECT_NEAR(engine.store().belief(col).mean[0], 1.5, 1e-4);
}

TEST(ComputeElbo, PriorEqualsPosteriorHasNoKlTerms) {
  const auto pu = scalar(0.3, 2.0), pw = scalar(-0.1, 0.5);
  QState q;
  q.q_u = pu;
  q.q_w = pw;
  const double sigma = 1.5, y = 0.2;
  const double md = 0.3 * -0.1;
  const double e2 = md * md + 0.3 * 0.3 * 0.5 + 0.1 * 0.1 * 2.0 + 2.0 * 0.5;
  const double lik = -0.5 * std::log(2 * std::numbers::pi * sigma * sigma) - (y * y - 2 * y * md + e2) / (2 * sigma * sigma);
  // gaussian_terms(q, q) is E_q ln q + H[q] = 0.
  EXPECT_NEAR(compute_elbo(q, pu, pw, nullptr, sigma, y), lik, 1e-13);
}

// Brute-force ELBO at d = 1: nested quadrature over u, w and y of
// E ln N(y | u w, sigma^2) + H[q(y)] + sum_x E ln p(x) / q(x).
double elbo_by_quadrature(const QState& q, const GaussianBelief& pu, const GaussianBelief& pw, const Partition& part,
                          double sigma, ClassLabel z) {
  using boost::math::quadrature::gauss_kronrod;
  const auto gauss = [](double x, double m, double v) {
    return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2 * std::numbers::pi * v);
  };
  const double mu = q.q_u.mean[0], vu = q.q_u.covariance(0, 0);
  const double mw = q.q_w.mean[0], vw = q.q_w.covariance(0, 0);
  const double l = part.lower(z), r = part.upper(z);
  const double zmass = gauss_kronrod<double, 61>::integrate([&](double y) { return gauss(y, q.m_ij, sigma * sigma); }, l, r,
                                                            15, 1e-14);
  const auto qy = [&](double y) { return gauss(y, q.m_ij, sigma * sigma) / zmass; };

  const double su = std::sqrt(vu), sw = std::sqrt(vw);
  const auto expected_loglik = [&](double y) {
    return gauss_kronrod<double, 61>::integrate(
        [&](double u) {
          return gauss(u, mu, vu) * gauss_kronrod<double, 61>::integrate(
                                        [&](double w) {
                                          const double e = y - u * w;
                                          return gauss(w, mw, vw) *
                                                 (-0.5 * std::log(2 * std::numbers::pi * sigma * sigma) -
                                                  e * e / (2 * sigma * sigma));
                                        },
                                        mw - 12 * sw, mw + 12 * sw, 0, 0);
        },
        mu - 12 * su, mu + 12 * su, 0, 0);
  };
  const double lik = gauss_kronrod<double, 61>::integrate([&](double y) { return qy(y) * expected_loglik(y); }, l, r, 10,
                                                          1e-12);
  const double entropy_y = gauss_kronrod<double, 61>::integrate(
      [&](double y) {
        const double p = qy(y);
        return p > 0 ? -p * std::log(p) : 0.0;
      },
      l, r, 15, 1e-13);
  const auto side = [&](const GaussianBelief& qx, const GaussianBelief& px) {
    const double m = qx.mean[0], v = qx.covariance(0, 0), s = std::sqrt(v);
    return gauss_kronrod<double, 61>::integrate(
        [&](double x) {
          return gauss(x, m, v) * (std::log(gauss(x, px.mean[0], px.covariance(0, 0))) - std::log(gauss(x, m, v)));
        },
        m - 12 * s, m + 12 * s, 15, 1e-13);
  };
  return lik + entropy_y + side(q.q_u, pu) + side(q.q_w, pw);
}

TEST(ComputeElbo, MatchesQuadratureOracleInOneDimension) {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double sigma = 1.0;
  const Partition part = build_partition(5, sigma);
  for (int trial = 0; trial < 6; ++trial) {
    const auto pu = scalar(2 * unif(rng) - 1, 0.5 + unif(rng));
    const auto pw = scalar(2 * unif(rng) - 1, 0.5 + unif(rng));
    const ClassLabel z{1 + trial % 5};
    QState q;
    q.q_u = pu;
    q.q_w = pw;
    for (int sweep = 0; sweep < 2; ++sweep) {
      q = update_q_y(q, part, sigma, z);
      q = update_q_u(q, pu, sigma);
      q = update_q_w(q, pw, sigma);
    }
    q.m_ij = q.q_u.mean.dot(q.q_w.mean) + 0.1;  // off the optimum on purpose
    q.ey = trunc_norm_mean(q.m_ij, sigma, part.lower(z), part.upper(z));
    const double closed = compute_elbo(q, pu, pw, &part, sigma, z);
    const double brute = elbo_by_quadrature(q, pu, pw, part, sigma, z);
    EXPECT_NEAR(closed, brute, 1e-4) << "class " << z.k;
  }
}

TEST(ProcessEvent, ElboTraceNonDecreasing) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> cls(1, 5), ent(0, 9);
  ModelConfig cfg;
  cfg.latent_dim = 10;
  cfg.obs_sigma = 1.0;
  cfg.partition = build_partition(5, 1.0);
  cfg.drift_mode = DriftMode::gbm;
  cfg.iters = 10;
  cfg.tol = 0.0;
  Engine engine(cfg);
  double t = 0.0;
  for (int i = 0; i < 100; ++i) {
    t += 0.5;
    const auto diag = engine.process_event({{Side::row, static_cast<std::uint32_t>(ent(rng))},
                                            {Side::column, static_cast<std::uint32_t>(ent(rng))},
                                            t,
                                            ClassLabel{cls(rng)}});
    for (std::size_t k = 1; k < diag.elbo_trace.size(); ++k) {
      ASSERT_GE(diag.elbo_trace[k] - diag.elbo_trace[k - 1], -1e-9) << "event " << i << " sweep " << k;
    }
  }
}

TEST(ProcessEvent, KalmanEquivalenceWithClampedColumn) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::exponential_distribution<double> gap(1.0);
  for (int d : {1, 3, 5}) {
    ModelConfig cfg;
    cfg.latent_dim = d;
    cfg.obs_sigma = 0.7;
    cfg.drift_mode = DriftMode::fixed;
    cfg.fixed_alpha = 0.05;
    cfg.iters = 1;
    Engine engine(cfg);
    Vector design(d);
    for (int i = 0; i < d; ++i) design[i] = n(rng);
    const EntityId row{Side::row, 0}, col{Side::column, 0};
    engine.clamp_entity(col, design, 0.0);
    engine.ensure_entity(row, 0.0);
    const GaussianBelief start = engine.store().belief(row);

    std::vector<KalmanStep> series;
    double t = 0.0;
    for (int k = 0; k < 30; ++k) series.push_back({t += gap(rng), n(rng)});
    const auto ref = kalman_reference(series, design, cfg.obs_sigma, cfg.fixed_alpha, start.mean, start.covariance, 0.0);
    for (std::size_t k = 0; k < series.size(); ++k) {
      engine.process_event({row, col, series[k].t, series[k].y});
      const auto& b = engine.store().belief(row);
      ASSERT_LT((b.mean - ref[k].mean).lpNorm<Eigen::Infinity>(), 1e-10);
      ASSERT_LT((b.covariance - ref[k].covariance).lpNorm<Eigen::Infinity>(), 1e-10);
    }
  }
}

TEST(ProcessEvent, ExtraSweepsDoNotChangeFlatLikelihoodFixedPoint) {
  auto run = [](int iters) {
    ModelConfig cfg;
    cfg.latent_dim = 3;
    cfg.obs_sigma = 1e9;
    cfg.drift_mode = DriftMode::none;
    cfg.iters = iters;
    cfg.tol = 0.0;
    Engine e(cfg);
    e.process_event({{Side::row, 0}, {Side::column, 0}, 1.0, 2.0});
    return e.store().belief({Side::row, 0});
  };
  const auto one = run(1), five = run(5);
  EXPECT_LT((one.mean - five.mean).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_LT((one.covariance - five.covariance).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(ProcessEvent, NoDriftTraceStrictlyContracts) {
  ModelConfig cfg;
  cfg.latent_dim = 4;
  cfg.partition = build_partition(5, 1.0);
  cfg.drift_mode = DriftMode::none;
  Engine e(cfg);
  double last = 1e300;
  for (int i = 0; i < 20; ++i) {
    e.process_event({{Side::row, 0}, {Side::column, 0}, 1.0 + i, ClassLabel{4}});
    const double tr = e.store().belief({Side::row, 0}).covariance.trace();
    EXPECT_LT(tr, last);
    last = tr;
  }
}

TEST(ProcessEvent, RejectsInvalidEvents) {
  ModelConfig cfg;
  cfg.latent_dim = 2;
  cfg.partition = build_partition(5, 1.0);
  Engine e(cfg);
  const EntityId r{Side::row, 0}, c{Side::column, 0};
  e.process_event({r, c, 5.0, ClassLabel{3}});
  EXPECT_THROW(e.process_event({r, c, 4.0, ClassLabel{3}}), TimeOrderError);
  EXPECT_THROW(e.process_event({r, c, 6.0, ClassLabel{6}}), ConfigError);
  EXPECT_THROW(e.process_event({r, c, 6.0, 2.5}), ConfigError);
  EXPECT_THROW(e.process_event({c, r, 6.0, ClassLabel{2}}), ConfigError);
}

TEST(ProcessEvent, GbmDriftStaysFinite) {
  std::mt19937_64 rng(19);
  std::uniform_int_distribution<int> cls(1, 5), ent(0, 4);
  ModelConfig cfg;
  cfg.latent_dim = 3;
  cfg.partition = build_partition(5, 1.0);
  cfg.row_scope = DriftScope::per_entity;
  cfg.c_row = 0.05;
  Engine e(cfg);
  double t = 0.0;
  for (int i = 0; i < 2000; ++i) {
    t += 1e-3 + (i % 7 == 0 ? 50.0 : 0.0);
    e.process_event({{Side::row, static_cast<std::uint32_t>(ent(rng))},
                     {Side::column, static_cast<std::uint32_t>(ent(rng))},
                     t,
                     ClassLabel{cls(rng)}});
  }
  for (const auto& [key, p] : e.drifts()) {
    EXPECT_TRUE(std::isfinite(p.rate()));
    EXPECT_GT(p.rate(), 0.0);
  }
}

}  // namespace
}  // namespace ckf
