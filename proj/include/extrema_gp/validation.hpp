#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "extrema_gp/gp_fit.hpp"
#include "extrema_gp/posterior.hpp"
#include "extrema_gp/rng.hpp"
#include "extrema_gp/simulate.hpp"

namespace extrema_gp::validation {

inline constexpr std::size_t kMaxValidationN = 60;
inline constexpr double kProp1Tolerance = 1e-8;
inline constexpr double kFdTolerance = 1e-4;

/// Doppler samples at uniform random design points, keyed by (seed, index).
inline Dataset random_doppler_dataset(std::size_t n, double sigma, std::uint64_t seed, std::uint64_t index) {
  const CounterRng rng(seed, index);
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.uniform(2 * i);
    y[i] = doppler(x[i]) + sigma * rng.normal(2 * i + 1);
  }
  return Dataset(std::move(x), std::move(y));
}

struct SpreadResult {
  double spread = 0.0;  // max - min of the differences across t
  double worst_t = 0.0;  // t at which the difference is farthest from its mean
};

/// Spread over ts of naive_log_lik_t(t) - log_unnorm_posterior(t) under a
/// uniform prior; zero up to rounding when the closed form is exact.
inline SpreadResult prop1_spread(const Dataset& data, const Hyperparams& hyper, const KernelSpec& spec,
                                 const std::vector<double>& ts) {
  const GPModel model = fit(data, hyper, spec);
  const PriorSpec flat = PriorSpec::uniform();
  std::vector<double> diff;
  diff.reserve(ts.size());
  for (double t : ts) diff.push_back(naive_log_lik_t(data, hyper, spec, t) - log_unnorm_posterior(model, flat, t));
  const auto [lo, hi] = std::minmax_element(diff.begin(), diff.end());
  double mean = 0.0;
  for (double d : diff) mean += d / static_cast<double>(diff.size());
  SpreadResult out{*hi - *lo, ts.front()};
  double worst = -1.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (std::abs(diff[i] - mean) > worst) {
      worst = std::abs(diff[i] - mean);
      out.worst_t = ts[i];
    }
  }
  return out;
}

struct FdCheck {
  std::string quantity;  // e.g. "mean_fprime(k=1)"
  double t = 0.0;
  double analytic = 0.0;
  double finite_difference = 0.0;
  double rel_error = 0.0;
};

/// Each derivative query against a central difference (step `step`) of the
/// query one order lower: mean_fprime(k) vs mean_f / mean_fprime(k-1) and
/// var_fprime(k) vs var_fprime(k-1), for k = 0..kmax (k >= 1 for variances).
/// Relative errors use max(|analytic|, floor * scale) in the denominator,
/// scale being the largest |analytic| of that quantity across ts.
inline std::vector<FdCheck> fd_battery(const GPModel& model, const std::vector<double>& ts, int kmax = 1,
                                       double step = 1e-5, double floor = 1e-6) {
  std::vector<FdCheck> checks;
  auto run = [&](const std::string& name, auto&& analytic, auto&& lower) {
    std::vector<FdCheck> batch;
    double scale = 0.0;
    for (double t : ts) {
      FdCheck c{name, t, analytic(t), (lower(t + step) - lower(t - step)) / (2.0 * step), 0.0};
      scale = std::max(scale, std::abs(c.analytic));
      batch.push_back(c);
    }
    for (auto& c : batch) {
      const double denom = std::max({std::abs(c.analytic), floor * scale, std::numeric_limits<double>::min()});
      c.rel_error = std::abs(c.analytic - c.finite_difference) / denom;
      checks.push_back(c);
    }
  };
  for (int k = 0; k <= kmax; ++k) {
    const std::string mk = "mean_fprime(k=" + std::to_string(k) + ")";
    if (k == 0) {
      run(mk, [&](double t) { return model.mean_fprime(t, 0); }, [&](double t) { return model.mean_f(t); });
    } else {
      run(mk, [&](double t) { return model.mean_fprime(t, k); }, [&](double t) { return model.mean_fprime(t, k - 1); });
      run("var_fprime(k=" + std::to_string(k) + ")", [&](double t) { return model.var_fprime(t, k); },
          [&](double t) { return model.var_fprime(t, k - 1); });
    }
  }
  return checks;
}

inline const FdCheck& worst(const std::vector<FdCheck>& checks) {
  return *std::max_element(checks.begin(), checks.end(),
                           [](const FdCheck& a, const FdCheck& b) { return a.rel_error < b.rel_error; });
}

}  // namespace extrema_gp::validation
