#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "extrema_gp/error.hpp"
#include "extrema_gp/gp_fit.hpp"
#include "extrema_gp/nelder_mead.hpp"
#include "extrema_gp/rng.hpp"

namespace extrema_gp {

struct LogBounds {
  double lower = 0.0;
  double upper = 0.0;
  double width() const { return upper - lower; }
  friend bool operator==(const LogBounds&, const LogBounds&) = default;
};

/// Multi-start simplex search configuration. Bounds are in natural-log space.
struct EBConfig {
  int starts = 8;
  int max_iters = 400;
  double tol = 1e-8;
  LogBounds log_lambda{std::log(1e-8), std::log(1.0)};
  LogBounds log_h{std::log(0.005), std::log(1.0)};
  LogBounds log_sigma2{std::log(1e-6), std::log(10.0)};
  std::uint64_t seed = 0;
  int workers = 1;  // threads used for the starts; 1 = sequential

  void validate() const {
    if (starts < 1) throw InvalidInput("empirical Bayes: starts must be >= 1");
    if (max_iters < 1) throw InvalidInput("empirical Bayes: max_iters must be >= 1");
    if (!(tol > 0.0)) throw InvalidInput("empirical Bayes: tol must be positive");
    for (const LogBounds* b : {&log_lambda, &log_h, &log_sigma2}) {
      if (!std::isfinite(b->lower) || !std::isfinite(b->upper) || !(b->lower < b->upper)) {
        throw InvalidInput("empirical Bayes: bounds must be finite with lower < upper");
      }
    }
  }

  Eigen::Vector3d lower() const { return {log_lambda.lower, log_h.lower, log_sigma2.lower}; }
  Eigen::Vector3d upper() const { return {log_lambda.upper, log_h.upper, log_sigma2.upper}; }
};

/// The unconstrained log marginal likelihood as a function of
/// (log lambda, log h, log sigma2), with the pairwise squared distances of
/// the design cached. Agrees with GPModel::log_marginal_unconstrained
/// whenever no jitter is needed; returns -inf when A is not positive definite.
class MarginalLikelihood {
 public:
  explicit MarginalLikelihood(const Dataset& data) : y_(data.y_vector()) {
    const auto xs = data.x();
    const auto n = static_cast<Eigen::Index>(xs.size());
    const Eigen::Map<const Eigen::VectorXd> x(xs.data(), n);
    sq_dist_ = (x.replicate(1, n) - x.transpose().replicate(n, 1)).array().square();
  }

  double operator()(const Eigen::Vector3d& log_params) const {
    const double lambda = std::exp(log_params[0]);
    const double h = std::exp(log_params[1]);
    const double sigma2 = std::exp(log_params[2]);
    const auto n = y_.size();
    const double n_lambda = static_cast<double>(n) * lambda;
    Eigen::MatrixXd a = (sq_dist_.array() * (-0.5 / (h * h))).exp().matrix();
    a.diagonal().array() += n_lambda;
    Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(a);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd z = llt.matrixL().solve(y_);
    const double c = sigma2 / n_lambda;
    const double log_det = 2.0 * a.diagonal().array().log().sum();
    return -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * c) - 0.5 * log_det -
           0.5 * z.squaredNorm() / c;
  }

  double operator()(const Hyperparams& hp) const {
    return (*this)(Eigen::Vector3d(std::log(hp.lambda), std::log(hp.h), std::log(hp.sigma2)));
  }

 private:
  Eigen::VectorXd y_;
  Eigen::MatrixXd sq_dist_;
};

struct EBStart {
  Eigen::Vector3d start;
  double start_value = -std::numeric_limits<double>::infinity();
  Eigen::Vector3d optimum;
  double value = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

struct EBResult {
  Hyperparams hyper;
  double log_marginal = 0.0;
  std::size_t best_start = 0;
  std::vector<EBStart> starts;
};

namespace detail {

inline double radical_inverse(std::uint64_t i, std::uint64_t base) {
  double inv = 1.0 / static_cast<double>(base), f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % base);
    i /= base;
    f *= inv;
  }
  return r;
}

inline Hyperparams from_log(const Eigen::Vector3d& p) {
  return {std::exp(p[0]), std::exp(p[1]), std::exp(p[2])};
}

inline EBStart run_start(const MarginalLikelihood& objective, const EBConfig& cfg, const Eigen::Vector3d& start) {
  EBStart out;
  out.start = start;
  out.start_value = objective(start);
  const Eigen::Vector3d lo = cfg.lower(), hi = cfg.upper();
  auto negated = [&](const Eigen::VectorXd& p) { return -objective(Eigen::Vector3d(p)); };
  NelderMeadOptions opt;
  opt.max_iters = cfg.max_iters;
  opt.rel_tol = cfg.tol;

  Eigen::Vector3d x = start;
  double value = out.start_value;
  // Restart the simplex until coordinate probes of +-0.01 in log space stop improving.
  constexpr int kMaxRestarts = 6;
  constexpr double kProbe = 0.01;
  for (int round = 0; round < kMaxRestarts; ++round) {
    opt.step_fraction = round == 0 ? 0.1 : 0.01;
    const NelderMeadResult r = nelder_mead(negated, x, lo, hi, opt);
    out.evaluations += r.evaluations;
    if (-r.value >= value || !std::isfinite(value)) {
      x = r.x;
      value = -r.value;
    }
    bool improved = false;
    for (int d = 0; d < 3 && !improved; ++d) {
      for (double s : {kProbe, -kProbe}) {
        Eigen::Vector3d p = x;
        p[d] = std::clamp(p[d] + s, lo[d], hi[d]);
        const double v = objective(p);
        ++out.evaluations;
        if (std::isfinite(v) && v > value + cfg.tol * std::abs(value)) {
          x = p;
          value = v;
          improved = true;
          break;
        }
      }
    }
    if (!improved) break;
  }
  out.optimum = x;
  out.value = value;
  return out;
}

}  // namespace detail

/// Start points: a Halton sequence (bases 2, 3, 5) with a seeded
/// Cranley-Patterson rotation, mapped into the log-space box.
inline std::vector<Eigen::Vector3d> eb_start_points(const EBConfig& cfg) {
  const CounterRng rng(cfg.seed, 0x45427374617274ULL);
  const std::array<double, 3> shift{rng.uniform(0), rng.uniform(1), rng.uniform(2)};
  const std::array<std::uint64_t, 3> bases{2, 3, 5};
  const Eigen::Vector3d lo = cfg.lower(), hi = cfg.upper();
  std::vector<Eigen::Vector3d> pts;
  for (int s = 0; s < cfg.starts; ++s) {
    Eigen::Vector3d p;
    for (int d = 0; d < 3; ++d) {
      double u = detail::radical_inverse(static_cast<std::uint64_t>(s) + 1, bases[d]) + shift[d];
      u -= std::floor(u);
      p[d] = lo[d] + u * (hi[d] - lo[d]);
    }
    pts.push_back(p);
  }
  return pts;
}

/// Choose (lambda, h, sigma2) maximizing the unconstrained marginal
/// likelihood N(y; 0, sigma2 (n lambda)^{-1} K(X,X) + sigma2 I).
/// Ties across starts go to the smaller lambda, then the smaller h.
inline EBResult select_hyperparams(const Dataset& data, const EBConfig& cfg = {}) {
  cfg.validate();
  const MarginalLikelihood objective(data);
  const std::vector<Eigen::Vector3d> starts = eb_start_points(cfg);
  std::vector<EBStart> results(starts.size());

  const int workers = std::clamp(cfg.workers, 1, cfg.starts);
  if (workers == 1) {
    for (std::size_t s = 0; s < starts.size(); ++s) results[s] = detail::run_start(objective, cfg, starts[s]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t s = next++; s < starts.size(); s = next++) {
          results[s] = detail::run_start(objective, cfg, starts[s]);
        }
      });
    }
  }

  std::size_t best = results.size();
  for (std::size_t s = 0; s < results.size(); ++s) {
    if (!std::isfinite(results[s].value)) continue;
    if (best == results.size()) {
      best = s;
      continue;
    }
    const EBStart& b = results[best];
    const EBStart& c = results[s];
    const bool better = c.value > b.value ||
                        (c.value == b.value && (c.optimum[0] < b.optimum[0] ||
                                                (c.optimum[0] == b.optimum[0] && c.optimum[1] < b.optimum[1])));
    if (better) best = s;
  }
  if (best == results.size()) {
    throw NumericalError(
        "empirical Bayes: every start failed to factorize K(X,X) + n*lambda*I; widen the lambda/h bounds");
  }
  EBResult out;
  out.hyper = detail::from_log(results[best].optimum);
  out.log_marginal = results[best].value;
  out.best_start = best;
  out.starts = std::move(results);
  return out;
}

}  // namespace extrema_gp
