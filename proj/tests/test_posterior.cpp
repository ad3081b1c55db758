#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace extrema_gp;

namespace {

const Hyperparams kN500{1.46e-4, 0.136, 0.00996};

double integral(const PosteriorGrid& g) {
  return std::accumulate(g.density.begin(), g.density.end(), 0.0) * g.grid_step;
}

PosteriorGrid normal_grid(double mean, double sd, std::size_t cells = kDefaultGridSize) {
  std::vector<double> lu(cells);
  const double step = 1.0 / static_cast<double>(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    const double t = (static_cast<double>(i) + 0.5) * step;
    lu[i] = -0.5 * std::pow((t - mean) / sd, 2);
  }
  return grid_from_log_density(std::move(lu));
}

}  // namespace

TEST(Prior, BetaDensity) {
  const PriorSpec u = PriorSpec::uniform();
  for (double t : {0.001, 0.3, 0.999}) EXPECT_EQ(u.log_density(t), 0.0);
  const PriorSpec b(2, 3);
  // Beta(2,3) density 12 t (1-t)^2
  for (double t : {0.1, 0.5, 0.9}) EXPECT_NEAR(b.log_density(t), std::log(12 * t * (1 - t) * (1 - t)), 1e-12);
  EXPECT_THROW(b.log_density(0.0), InvalidInput);
  EXPECT_THROW(b.log_density(1.0), InvalidInput);
  EXPECT_THROW(u.log_density(-0.1), InvalidInput);
  EXPECT_THROW(PriorSpec(0.0, 1.0), InvalidInput);
  EXPECT_THROW(PriorSpec(1.0, -2.0), InvalidInput);
  EXPECT_EQ(b.to_string(), "beta:2,3");
  EXPECT_EQ(PriorSpec(2, 3), b);
}

TEST(Posterior, UniformPriorContributesNothing) {
  const GPModel m = fit(test::doppler_data(60, 0.1, 3), {1e-3, 0.12, 0.01});
  for (double t : test::uniform_points(20, 1, 0.01, 0.99)) {
    const double ll = log_likelihood_t(m.mean_fprime(t, 0), m.var_fprime(t, 0), m.kernel().k11_diagonal());
    EXPECT_EQ(log_unnorm_posterior(m, PriorSpec::uniform(), t), ll);
  }
}

TEST(Posterior, AtAZeroOfTheMeanDerivative) {
  const GPModel m = fit(test::doppler_data(100, 0.1, 3), {1.4e-3, 0.127, 0.0106});
  const auto roots = gp_extrema_in_segment(m, 0.2, 0.4, 400);
  ASSERT_FALSE(roots.empty());
  const double t = roots.front();
  const double var = m.var_fprime(t, 0);
  const PriorSpec p(2, 3);
  const double expected = -0.5 * std::log(var / m.kernel().k11_diagonal()) + p.log_density(t);
  const double mu = m.mean_fprime(t, 0);
  EXPECT_NEAR(log_unnorm_posterior(m, p, t), expected, mu * mu / var + 1e-14);
}

TEST(Posterior, ClosedFormMatchesNaiveDifferencesWithPrior) {
  const Dataset d = test::random_data(30, 77);
  const Hyperparams hp{2e-3, 0.08, 0.01};
  const KernelSpec k(hp.h);
  const GPModel m = fit(d, hp);
  const PriorSpec p(2, 3);
  const auto ts = test::uniform_points(50, 5, 0.01, 0.99);
  const double ref_naive = validation::naive_log_lik_t(d, hp, k, ts[0]) + p.log_density(ts[0]);
  const double ref_closed = log_unnorm_posterior(m, p, ts[0]);
  for (double t : ts) {
    const double naive = validation::naive_log_lik_t(d, hp, k, t) + p.log_density(t) - ref_naive;
    EXPECT_NEAR(log_unnorm_posterior(m, p, t) - ref_closed, naive, 1e-8);
  }
}

TEST(Posterior, GridInvariants) {
  const GPModel m = fit(test::doppler_data(200, 0.1, 8), {3e-4, 0.13, 0.01});
  for (const PriorSpec& p : {PriorSpec::uniform(), PriorSpec(2, 3), PriorSpec(0.5, 0.5)}) {
    const PosteriorGrid g = compute_posterior(m, p);
    ASSERT_EQ(g.size(), kDefaultGridSize);
    EXPECT_NEAR(integral(g), 1.0, 1e-10);
    EXPECT_NEAR(g.ts.front(), 0.5 / 2001, 1e-15);
    EXPECT_NEAR(g.ts.back(), 1 - 0.5 / 2001, 1e-12);
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_GE(g.density[i], 0.0);
      EXPECT_TRUE(std::isfinite(g.log_unnorm[i]));
      if (i > 0) {
        EXPECT_GT(g.ts[i], g.ts[i - 1]);
      }
    }
  }
}

TEST(Posterior, ArgumentChecks) {
  const GPModel m = fit(test::doppler_data(50, 0.1, 8), {1e-3, 0.13, 0.01});
  EXPECT_THROW(compute_posterior(m, PriorSpec::uniform(), 100), InvalidInput);
  EXPECT_THROW(compute_posterior(m, PriorSpec::uniform(), 201, 0.6, 0.4), InvalidInput);
  EXPECT_THROW(compute_posterior(m, PriorSpec::uniform(), 201, -0.1, 0.4), InvalidInput);
  EXPECT_NO_THROW(compute_posterior(m, PriorSpec::uniform(), 201, 0.2, 0.4));
}

TEST(Posterior, PriorReweightingMatchesDirectEvaluation) {
  const GPModel m = fit(test::doppler_data(150, 0.1, 2), {5e-4, 0.13, 0.01});
  const PosteriorGrid flat = compute_posterior(m, PriorSpec::uniform());
  const PosteriorGrid direct = compute_posterior(m, PriorSpec(2, 3));
  const PosteriorGrid rw = reweight_prior(flat, PriorSpec::uniform(), PriorSpec(2, 3));
  for (std::size_t i = 0; i < flat.size(); ++i) {
    EXPECT_NEAR(rw.density[i], direct.density[i], 1e-9 * (1 + direct.density[i]));
  }
}

TEST(Posterior, GridRefinementAndModesOnDopplerN500) {
  const GPModel m = fit(test::doppler_data(500, 0.1, 1), kN500);
  const PosteriorGrid coarse = compute_posterior(m, PriorSpec::uniform(), 2001);
  const PosteriorGrid fine = compute_posterior(m, PriorSpec::uniform(), 4001);
  EXPECT_LT(std::abs(std::expm1(fine.log_norm_const - coarse.log_norm_const)), 1e-6);

  const auto modes = posterior_modes(coarse);
  ASSERT_EQ(modes.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(modes[k], kDopplerExtrema[k], 0.01);
}

TEST(PosteriorCdf, EndpointsAndNormalOracle) {
  const PosteriorGrid g = normal_grid(0.5, 0.01);
  EXPECT_EQ(posterior_cdf(g, g.t_hi), 1.0);
  EXPECT_EQ(posterior_cdf(g, 0.0), 0.0);
  EXPECT_EQ(posterior_cdf(g, -3.0), 0.0);
  EXPECT_NEAR(posterior_cdf(g, 0.5), 0.5, 1e-4);
  for (double z : {0.48, 0.49, 0.495, 0.505, 0.51, 0.53}) {
    EXPECT_NEAR(posterior_cdf(g, z), normal_cdf(z, 0.5, 0.01), 1e-3) << z;
  }
}

TEST(PosteriorCdf, MedianByBisection) {
  const GPModel m = fit(test::doppler_data(200, 0.1, 4), {3e-4, 0.13, 0.01});
  const PosteriorGrid g = compute_posterior(m, PriorSpec(2, 3));
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    (posterior_cdf(g, mid) < 0.5 ? lo : hi) = mid;
  }
  EXPECT_NEAR(posterior_cdf(g, 0.5 * (lo + hi)), 0.5, g.grid_step * g.max_density());
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double c = posterior_cdf(g, i / 1000.0);
    EXPECT_GE(c, prev);
    prev = c;
  }
}

TEST(PosteriorModes, ThresholdAndSpread) {
  std::vector<double> lu(2001);
  for (std::size_t i = 0; i < lu.size(); ++i) {
    const double t = (i + 0.5) / 2001.0;
    lu[i] = std::log(std::exp(-0.5 * std::pow((t - 0.3) / 0.02, 2)) +
                     0.5 * std::exp(-0.5 * std::pow((t - 0.7) / 0.02, 2)) +
                     0.001 * std::exp(-0.5 * std::pow((t - 0.9) / 0.01, 2)));
  }
  const PosteriorGrid g = grid_from_log_density(std::move(lu));
  const auto modes = posterior_modes(g, 0.01);
  ASSERT_EQ(modes.size(), 2u);
  EXPECT_NEAR(modes[0], 0.3, 1e-3);
  EXPECT_NEAR(modes[1], 0.7, 1e-3);
  EXPECT_EQ(posterior_modes(g, 1e-4).size(), 3u);
  EXPECT_NEAR(restricted_spread(g, 0.0, 0.5), 0.02, 1e-4);
  EXPECT_TRUE(std::isnan(restricted_spread(normal_grid(0.5, 0.01), 0.95, 0.95)));
}
