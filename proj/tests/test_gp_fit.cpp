#include <cmath>
#include <numbers>

#include <Eigen/LU>
#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace extrema_gp;

namespace {

/// (K(X,X) + n lambda I) built and solved with a full-pivot LU, independent
/// of the Cholesky path.
struct DenseOracle {
  Eigen::MatrixXd a;
  Eigen::FullPivLU<Eigen::MatrixXd> lu;
  Eigen::VectorXd alpha;
  double c = 0.0;

  DenseOracle(const Dataset& d, const Hyperparams& hp) {
    const KernelSpec k(hp.h);
    const auto n = static_cast<Eigen::Index>(d.size());
    a.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) a(i, j) = k.eval(0, 0, d.x()[i], d.x()[j]);
    a.diagonal().array() += static_cast<double>(n) * hp.lambda;
    lu.compute(a);
    alpha = lu.solve(d.y_vector());
    c = hp.sigma2 / (static_cast<double>(n) * hp.lambda);
  }
};

const Hyperparams kHyper{1e-3, 0.1, 0.01};

}  // namespace

TEST(Dataset, Validation) {
  EXPECT_THROW(Dataset({0.5}, {1.0}), InvalidInput);
  EXPECT_THROW(Dataset({0.1, 0.2}, {1.0}), InvalidInput);
  EXPECT_THROW(Dataset({0.1, 1.2}, {1.0, 2.0}), InvalidInput);
  EXPECT_THROW(Dataset({-0.1, 0.2}, {1.0, 2.0}), InvalidInput);
  EXPECT_THROW(Dataset({0.1, 0.2}, {1.0, std::nan("")}), InvalidInput);
  EXPECT_THROW(Dataset({0.1, 0.2}, {1.0, INFINITY}), InvalidInput);
  EXPECT_THROW(Dataset({0.5, 0.5}, {1.0, 2.0}), InvalidInput);
  EXPECT_NO_THROW(Dataset({0.5, 0.5}, {1.0, 2.0}, DuplicatePolicy::Allow));
  EXPECT_NO_THROW(Dataset({0.9, 0.1, 0.0, 1.0}, {1.0, 2.0, 3.0, 4.0}));
}

TEST(Hyperparams, Validation) {
  EXPECT_THROW((Hyperparams{0.0, 0.1, 0.1}.validate()), InvalidInput);
  EXPECT_THROW((Hyperparams{0.1, -0.1, 0.1}.validate()), InvalidInput);
  EXPECT_THROW((Hyperparams{0.1, 0.1, 0.0}.validate()), InvalidInput);
  EXPECT_THROW((Hyperparams{0.1, 0.1, INFINITY}.validate()), InvalidInput);
  EXPECT_NO_THROW((Hyperparams{0.1, 0.1, 0.1}.validate()));
  EXPECT_DOUBLE_EQ((Hyperparams{0.01, 0.1, 0.02}.prior_scale2(100)), 0.02);
}

TEST(Fit, ZeroDataGivesZeroWeights) {
  const GPModel m = fit(Dataset({0.0, 1.0}, {0.0, 0.0}), {0.3, 0.2, 1.0});
  EXPECT_EQ(m.weights()[0], 0.0);
  EXPECT_EQ(m.weights()[1], 0.0);
  for (double t : {0.0, 0.3, 1.0}) {
    EXPECT_EQ(m.mean_f(t), 0.0);
    for (int k = 0; k <= 3; ++k) EXPECT_EQ(m.mean_fprime(t, k), 0.0);
  }
}

TEST(Fit, SolveResidualAndFactorReconstruction) {
  const Dataset d = test::random_data(30, 5);
  const GPModel m = fit(d, kHyper);
  const DenseOracle o(d, kHyper);
  const Eigen::VectorXd res = o.a * m.weights() - d.y_vector();
  EXPECT_LT(res.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(res.norm() / d.y_vector().norm(), 1e-8);
  const Eigen::MatrixXd l = m.factor();
  EXPECT_LT((l * l.transpose() - o.a).norm() / o.a.norm(), 1e-8);
  EXPECT_EQ(m.jitter(), 0.0);
}

TEST(Fit, DuplicateDesignMatchesDenseSolve) {
  // X = [0.5, 0.5], y = [2, 2], n lambda = 2: A = [[3, 1], [1, 3]], alpha = [0.5, 0.5],
  // mean_f(0.5) = 1.
  const Dataset d({0.5, 0.5}, {2.0, 2.0}, DuplicatePolicy::Allow);
  const Hyperparams hp{1.0, 0.3, 1.0};
  const GPModel m = fit(d, hp);
  const DenseOracle o(d, hp);
  EXPECT_NEAR(m.mean_f(0.5), 1.0, 1e-14);
  EXPECT_NEAR(m.mean_f(0.5), (o.a.row(0) - 2.0 * Eigen::RowVector2d(1, 0)).dot(o.alpha), 1e-14);
  EXPECT_NEAR(m.mean_f(0.7), KernelSpec(0.3).eval(0, 0, 0.7, 0.5) * o.alpha.sum(), 1e-14);
}

TEST(Fit, RidgeLimit) {
  const Dataset d = test::random_data(20, 8);
  const double ymax = d.y_vector().cwiseAbs().maxCoeff();
  const GPModel m = fit(d, {1e9 / 20.0, 0.1, 0.01});
  for (double t : test::uniform_points(10, 1)) EXPECT_LT(std::abs(m.mean_f(t)), 1e-6 * ymax);
}

TEST(Fit, MeansAndVariancesMatchDenseOracle) {
  const Dataset d = test::random_data(40, 9);
  const GPModel m = fit(d, kHyper);
  const DenseOracle o(d, kHyper);
  const KernelSpec k(kHyper.h);
  for (double t : test::uniform_points(15, 4)) {
    Eigen::VectorXd k0(40), k1(40), k1c(40);
    for (Eigen::Index i = 0; i < 40; ++i) {
      k0[i] = k.eval(0, 0, t, d.x()[i]);
      k1[i] = k.eval(1, 0, t, d.x()[i]);
      k1c[i] = k.eval(0, 1, d.x()[i], t);
    }
    EXPECT_NEAR(m.mean_f(t), k0.dot(o.alpha), 1e-9);
    EXPECT_NEAR(m.mean_fprime(t, 0), k1.dot(o.alpha), 1e-8);
    const double var = o.c * (k.eval(1, 1, t, t) - k1.dot(o.lu.solve(k1c)));
    EXPECT_NEAR(m.var_fprime(t, 0), var, 1e-8 * std::abs(var) + 1e-12);
  }
}

TEST(Fit, BatchedMomentsMatchScalarQueries) {
  const Dataset d = test::doppler_data(300, 0.1, 3);
  const GPModel m = fit(d, {2e-4, 0.12, 0.01});
  const auto ts = test::uniform_points(600, 6);
  const FprimeMoments mom = m.fprime_moments(ts);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    EXPECT_NEAR(mom.mean[e], m.mean_fprime(ts[i], 0), 1e-9 * (1.0 + std::abs(mom.mean[e])));
    EXPECT_NEAR(mom.variance[e], m.var_fprime(ts[i], 0), 1e-9 * mom.variance[e]);
  }
}

TEST(Fit, DerivativesMatchFiniteDifferences) {
  const Dataset d = test::doppler_data(100, 0.1, 17);
  const GPModel m = fit(d, {1.4e-3, 0.127, 0.0106});
  const double step = 1e-5;
  const auto ts = test::uniform_points(25, 12, 0.02, 0.98);
  auto check = [&](const char* what, auto&& analytic, auto&& lower, double tol) {
    double scale = 0.0;
    for (double t : ts) scale = std::max(scale, std::abs(analytic(t)));
    for (double t : ts) {
      const double fd = (lower(t + step) - lower(t - step)) / (2 * step);
      EXPECT_LT(test::rel_err(analytic(t), fd, 1e-6 * scale), tol) << what << " at t=" << t;
    }
  };
  check("mean k=0", [&](double t) { return m.mean_fprime(t, 0); }, [&](double t) { return m.mean_f(t); }, 1e-5);
  for (int k = 1; k <= 3; ++k) {
    check("mean", [&](double t) { return m.mean_fprime(t, k); }, [&](double t) { return m.mean_fprime(t, k - 1); },
          1e-5);
    check("var", [&](double t) { return m.var_fprime(t, k); }, [&](double t) { return m.var_fprime(t, k - 1); },
          1e-4);
  }
}

TEST(Fit, VarianceFarFromDataIsPriorVariance) {
  const Dataset d({0.0, 0.01, 0.02}, {1.0, 2.0, 1.5});
  const Hyperparams hp{0.01, 0.01, 0.5};
  const GPModel m = fit(d, hp);
  const double prior = hp.sigma2 / (3 * hp.lambda) / (hp.h * hp.h);
  EXPECT_NEAR(m.var_fprime(1.0, 0), prior, 1e-12 * prior);
}

TEST(Fit, VariancePositiveOnDopplerGrid) {
  const GPModel m = fit(test::doppler_data(100, 0.1, 2), {1.4e-3, 0.127, 0.0106});
  for (int i = 0; i <= 2000; ++i) EXPECT_GT(m.var_fprime(i / 2000.0, 0), 0.0);
}

TEST(Fit, RejectsBadOrder) {
  const GPModel m = fit(test::random_data(10, 1), kHyper);
  EXPECT_THROW(m.mean_fprime(0.5, 4), InvalidInput);
  EXPECT_THROW(m.var_fprime(0.5, -1), InvalidInput);
}

TEST(Fit, SingleFactorization) {
  const Dataset d = test::doppler_data(200, 0.1, 4);
  const auto before = factorizations_performed();
  const GPModel m = fit(d, {2e-4, 0.12, 0.01});
  EXPECT_EQ(factorizations_performed() - before, 1u);
  for (double t : test::uniform_points(200, 2)) {
    (void)m.mean_f(t);
    for (int k = 0; k <= 3; ++k) {
      (void)m.mean_fprime(t, k);
      (void)m.var_fprime(t, k);
    }
  }
  (void)compute_posterior(m, PriorSpec(2, 3));
  (void)m.log_marginal_unconstrained();
  EXPECT_EQ(factorizations_performed() - before, 1u);
}

TEST(Fit, JitterLadder) {
  // Many coincident points with a negligible ridge: A is numerically singular.
  std::vector<double> x(40, 0.5), y(40, 1.0);
  const GPModel m = fit(Dataset(x, y, DuplicatePolicy::Allow), {1e-20, 0.1, 0.01});
  EXPECT_GT(m.jitter(), 0.0);
  Eigen::MatrixXd neg = -Eigen::MatrixXd::Identity(3, 3);
  try {
    (void)factorize_with_jitter(neg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("smallest pivot"), std::string::npos);
  }
}

TEST(NaiveLikelihood, TwoPointHandComputation) {
  const double x0 = 0.2, x1 = 0.45, t = 0.31, h = 0.2, lambda = 0.05, sigma2 = 0.3;
  const Dataset d({x0, x1}, {0.7, -0.4});
  const Hyperparams hp{lambda, h, sigma2};
  const KernelSpec k(h);
  // Hand-rolled: entries of Sigma_t from the SE formulas directly.
  auto se = [&](double a, double b) { return std::exp(-(a - b) * (a - b) / (2 * h * h)); };
  auto d1 = [&](double xx) { return (xx - t) / (h * h) * se(xx, t); };  // d/dt K(x, t)
  const double k11 = 1.0 / (h * h);
  const double c = sigma2 / (2 * lambda);
  const double s00 = c * (1.0 - d1(x0) * d1(x0) / k11) + sigma2;
  const double s11 = c * (1.0 - d1(x1) * d1(x1) / k11) + sigma2;
  const double s01 = c * (se(x0, x1) - d1(x0) * d1(x1) / k11);
  const double det = s00 * s11 - s01 * s01;
  const double q = (s11 * 0.7 * 0.7 - 2 * s01 * 0.7 * -0.4 + s00 * 0.4 * 0.4) / det;
  const double expected = -std::log(2 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * q;
  EXPECT_NEAR(validation::naive_log_lik_t(d, hp, k, t), expected, 1e-10);
}

TEST(NaiveLikelihood, ClosedFormEquivalence) {
  const Dataset d = test::random_data(30, 21);
  const KernelSpec k(kHyper.h);
  const auto ts = test::uniform_points(50, 22, 0.01, 0.99);
  const auto sp = validation::prop1_spread(d, kHyper, k, ts);
  EXPECT_LT(sp.spread, 1e-8);
  const GPModel m = fit(d, kHyper);
  for (std::size_t i = 0; i + 1 < ts.size(); i += 2) {
    const double naive = validation::naive_log_lik_t(d, kHyper, k, ts[i]) -
                         validation::naive_log_lik_t(d, kHyper, k, ts[i + 1]);
    const double closed = log_unnorm_posterior(m, PriorSpec::uniform(), ts[i]) -
                          log_unnorm_posterior(m, PriorSpec::uniform(), ts[i + 1]);
    EXPECT_NEAR(naive, closed, 1e-8);
  }
}

TEST(NaiveLikelihood, Deterministic) {
  const Dataset d = test::random_data(20, 2);
  const KernelSpec k(kHyper.h);
  EXPECT_EQ(validation::naive_log_lik_t(d, kHyper, k, 0.4), validation::naive_log_lik_t(d, kHyper, k, 0.4));
}

TEST(MarginalLikelihood, MatchesDenseGaussian) {
  const Dataset d = test::random_data(25, 31);
  const GPModel m = fit(d, kHyper);
  const DenseOracle o(d, kHyper);
  const Eigen::MatrixXd cov = o.c * o.a;  // sigma2/(n lambda) K + sigma2 I
  Eigen::FullPivLU<Eigen::MatrixXd> lu(cov);
  const double logdet = std::log(std::abs(lu.determinant()));
  const double quad = d.y_vector().dot(lu.solve(d.y_vector()));
  const double expected = -0.5 * 25 * std::log(2 * std::numbers::pi) - 0.5 * logdet - 0.5 * quad;
  EXPECT_NEAR(m.log_marginal_unconstrained(), expected, 1e-8 * std::abs(expected));
}

TEST(MarginalLikelihood, IdentityRegime) {
  const double lambda = 0.2, sigma2 = 0.5, y0 = 0.3, y1 = -1.1;
  const GPModel m = fit(Dataset({0.0, 1.0}, {y0, y1}), {lambda, 1e-3, sigma2});
  const double v = sigma2 / (2 * lambda) + sigma2;
  auto logn = [&](double y) { return -0.5 * std::log(2 * std::numbers::pi * v) - y * y / (2 * v); };
  EXPECT_NEAR(m.log_marginal_unconstrained(), logn(y0) + logn(y1), 1e-8);
}

TEST(MarginalLikelihood, PermutationInvariant) {
  const Dataset d = test::random_data(30, 41);
  std::vector<double> x(d.x().begin(), d.x().end()), y(d.y().begin(), d.y().end());
  std::reverse(x.begin(), x.end());
  std::reverse(y.begin(), y.end());
  std::rotate(x.begin(), x.begin() + 7, x.end());
  std::rotate(y.begin(), y.begin() + 7, y.end());
  const GPModel a = fit(d, kHyper);
  const GPModel b = fit(Dataset(x, y), kHyper);
  EXPECT_NEAR(a.log_marginal_unconstrained(), b.log_marginal_unconstrained(), 1e-10);
}

TEST(MarginalLikelihood, ZeroDataPrefersSmallNoise) {
  const Dataset d({0.1, 0.4, 0.8}, {0.0, 0.0, 0.0});
  double prev = -INFINITY;
  for (double s2 : {10.0, 1.0, 0.1, 1e-2, 1e-3, 1e-4}) {
    const double v = fit(d, {0.1, 0.2, s2}).log_marginal_unconstrained();
    EXPECT_GT(v, prev);
    prev = v;
  }
}
