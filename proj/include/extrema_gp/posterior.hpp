#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "extrema_gp/error.hpp"
#include "extrema_gp/gp_fit.hpp"

namespace extrema_gp {

enum class PriorFamily { Beta };

/// Prior on the extremum index t. Beta(a, b) on (0, 1).
class PriorSpec {
 public:
  PriorSpec() : PriorSpec(1.0, 1.0) {}
  PriorSpec(double a, double b, PriorFamily family = PriorFamily::Beta) : family_(family), a_(a), b_(b) {
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
      throw InvalidInput("beta prior parameters must be positive and finite");
    }
    log_beta_ = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  }

  static PriorSpec uniform() { return {1.0, 1.0}; }

  PriorFamily family() const noexcept { return family_; }
  double a() const noexcept { return a_; }
  double b() const noexcept { return b_; }

  /// log pi(t). Throws InvalidInput outside (0, 1) rather than returning +-inf.
  double log_density(double t) const {
    if (!(t > 0.0 && t < 1.0)) {
      std::ostringstream os;
      os << "prior log-density undefined at t = " << t << " (must lie strictly inside (0, 1))";
      throw InvalidInput(os.str());
    }
    double v = -log_beta_;
    if (a_ != 1.0) v += (a_ - 1.0) * std::log(t);
    if (b_ != 1.0) v += (b_ - 1.0) * std::log1p(-t);
    return v;
  }

  std::string to_string() const {
    std::ostringstream os;
    os << "beta:" << a_ << "," << b_;
    return os.str();
  }

  friend bool operator==(const PriorSpec& l, const PriorSpec& r) {
    return l.family_ == r.family_ && l.a_ == r.a_ && l.b_ == r.b_;
  }

 private:
  PriorFamily family_;
  double a_;
  double b_;
  double log_beta_ = 0.0;
};

/// The closed-form log likelihood of t up to an additive constant:
///   -1/2 log(sigma_hat^2(t) / K_11(t,t)) - mu_hat^2(t) / (2 sigma_hat^2(t)).
inline double log_likelihood_t(double mean_fprime, double var_fprime, double k11) {
  return -0.5 * std::log(var_fprime / k11) - mean_fprime * mean_fprime / (2.0 * var_fprime);
}

/// log pi_n(t | X, y) up to an additive constant.
inline double log_unnorm_posterior(const GPModel& model, const PriorSpec& prior, double t) {
  const double log_prior = prior.log_density(t);
  const double mu = model.mean_fprime(t, 0);
  const double var = model.var_fprime(t, 0);
  return log_likelihood_t(mu, var, model.kernel().k11_diagonal()) + log_prior;
}

/// Normalized posterior of t on the midpoints of equal cells spanning [t_lo, t_hi].
struct PosteriorGrid {
  double t_lo = 0.0;
  double t_hi = 1.0;
  double grid_step = 0.0;
  std::vector<double> ts;
  std::vector<double> log_unnorm;
  std::vector<double> density;
  double log_norm_const = 0.0;

  std::size_t size() const noexcept { return ts.size(); }
  double max_density() const { return *std::max_element(density.begin(), density.end()); }
  double cell_lo(std::size_t i) const { return t_lo + static_cast<double>(i) * grid_step; }
  double cell_hi(std::size_t i) const { return t_lo + static_cast<double>(i + 1) * grid_step; }
};

inline constexpr std::size_t kDefaultGridSize = 2001;

namespace detail {

inline std::vector<double> midpoints(std::size_t cells, double lo, double hi) {
  std::vector<double> ts(cells);
  const double step = (hi - lo) / static_cast<double>(cells);
  for (std::size_t i = 0; i < cells; ++i) ts[i] = lo + (static_cast<double>(i) + 0.5) * step;
  return ts;
}

/// Fills density and log_norm_const from log_unnorm by log-sum-exp.
inline void normalize(PosteriorGrid& grid) {
  const double peak = *std::max_element(grid.log_unnorm.begin(), grid.log_unnorm.end());
  double sum = 0.0;
  for (double v : grid.log_unnorm) sum += std::exp(v - peak);
  grid.log_norm_const = peak + std::log(sum) + std::log(grid.grid_step);
  grid.density.resize(grid.log_unnorm.size());
  for (std::size_t i = 0; i < grid.log_unnorm.size(); ++i) {
    grid.density[i] = std::exp(grid.log_unnorm[i] - grid.log_norm_const);
  }
}

inline void check_grid_args(std::size_t grid_size, double t_lo, double t_hi) {
  if (grid_size < 101) throw InvalidInput("posterior grid needs at least 101 cells");
  if (!(t_lo >= 0.0 && t_lo < t_hi && t_hi <= 1.0)) {
    throw InvalidInput("posterior grid span must satisfy 0 <= t_lo < t_hi <= 1");
  }
}

}  // namespace detail

/// Evaluates the posterior on grid_size cells over [t_lo, t_hi] and
/// normalizes it with the midpoint rule. Cell midpoints never touch 0 or 1.
inline PosteriorGrid compute_posterior(const GPModel& model, const PriorSpec& prior,
                                       std::size_t grid_size = kDefaultGridSize, double t_lo = 0.0,
                                       double t_hi = 1.0) {
  detail::check_grid_args(grid_size, t_lo, t_hi);
  PosteriorGrid grid;
  grid.t_lo = t_lo;
  grid.t_hi = t_hi;
  grid.grid_step = (t_hi - t_lo) / static_cast<double>(grid_size);
  grid.ts = detail::midpoints(grid_size, t_lo, t_hi);
  const FprimeMoments moments = model.fprime_moments(grid.ts);
  const double k11 = model.kernel().k11_diagonal();
  grid.log_unnorm.resize(grid_size);
  for (std::size_t i = 0; i < grid_size; ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    const double v = log_likelihood_t(moments.mean[e], moments.variance[e], k11) + prior.log_density(grid.ts[i]);
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os.precision(17);
      os << "posterior log-density is not finite at t = " << grid.ts[i];
      throw NumericalError(os.str());
    }
    grid.log_unnorm[i] = v;
  }
  detail::normalize(grid);
  return grid;
}

/// Builds a grid from arbitrary log-density values at the cell midpoints
/// (used for synthetic densities and for re-weighting by a different prior).
inline PosteriorGrid grid_from_log_density(std::vector<double> log_unnorm, double t_lo = 0.0, double t_hi = 1.0) {
  detail::check_grid_args(log_unnorm.size(), t_lo, t_hi);
  PosteriorGrid grid;
  grid.t_lo = t_lo;
  grid.t_hi = t_hi;
  grid.grid_step = (t_hi - t_lo) / static_cast<double>(log_unnorm.size());
  grid.ts = detail::midpoints(log_unnorm.size(), t_lo, t_hi);
  grid.log_unnorm = std::move(log_unnorm);
  detail::normalize(grid);
  return grid;
}

/// Same likelihood, different prior: swaps log pi(t) without refitting.
inline PosteriorGrid reweight_prior(const PosteriorGrid& grid, const PriorSpec& from, const PriorSpec& to) {
  std::vector<double> lu(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    lu[i] = grid.log_unnorm[i] - from.log_density(grid.ts[i]) + to.log_density(grid.ts[i]);
  }
  return grid_from_log_density(std::move(lu), grid.t_lo, grid.t_hi);
}

/// Posterior CDF by partial midpoint sums; the cell containing z contributes
/// the fraction of its width below z.
inline double posterior_cdf(const PosteriorGrid& grid, double z) {
  if (z <= grid.t_lo) return 0.0;
  if (z >= grid.t_hi) return 1.0;
  const double pos = (z - grid.t_lo) / grid.grid_step;
  const auto full = std::min(static_cast<std::size_t>(pos), grid.size() - 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < full; ++i) acc += grid.density[i];
  acc += (pos - static_cast<double>(full)) * grid.density[full];
  return std::clamp(acc * grid.grid_step, 0.0, 1.0);
}

inline constexpr double kDefaultModeThreshold = 0.01;

/// Interior grid points exceeding both neighbours and rel_threshold * max
/// density. A two-point plateau reports its left point once.
inline std::vector<double> posterior_modes(const PosteriorGrid& grid, double rel_threshold = kDefaultModeThreshold) {
  std::vector<double> modes;
  const double cut = rel_threshold * grid.max_density();
  const auto& d = grid.density;
  for (std::size_t i = 1; i + 1 < d.size(); ++i) {
    if (d[i] > d[i - 1] && d[i] >= d[i + 1] && d[i] > cut) modes.push_back(grid.ts[i]);
  }
  return modes;
}

/// Standard deviation of the density restricted to [lo, hi).
inline double restricted_spread(const PosteriorGrid& grid, double lo, double hi) {
  double mass = 0.0, first = 0.0, second = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid.ts[i];
    if (t < lo || t >= hi) continue;
    mass += grid.density[i];
    first += grid.density[i] * t;
  }
  if (!(mass > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double mean = first / mass;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid.ts[i];
    if (t < lo || t >= hi) continue;
    second += grid.density[i] * (t - mean) * (t - mean);
  }
  return std::sqrt(second / mass);
}

}  // namespace extrema_gp
