#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "extrema_gp/empirical_bayes.hpp"
#include "extrema_gp/error.hpp"
#include "extrema_gp/gp_fit.hpp"
#include "extrema_gp/posterior.hpp"
#include "extrema_gp/rng.hpp"
#include "extrema_gp/summarize.hpp"

namespace extrema_gp {

/// f(x) = sqrt(x (1 - x)) sin(2 pi / (x + 0.5)).
inline double doppler(double x) { return std::sqrt(x * (1.0 - x)) * std::sin(2.0 * std::numbers::pi / (x + 0.5)); }

/// Published extremum locations of doppler() and |f''| there.
inline constexpr std::array<double, 3> kDopplerExtrema{0.0863, 0.3096, 0.7491};
inline constexpr std::array<double, 3> kDopplerCurvatures{111.04, 44.55, 11.91};

enum class Design { Equispaced };

struct SimConfig {
  std::size_t n = 500;
  double sigma = 0.1;
  std::size_t replicates = 100;
  std::uint64_t seed = 1;
  PriorSpec prior = PriorSpec::uniform();
  double alpha_hpd = 0.05;
  double alpha_ci = 0.05;
  Design design = Design::Equispaced;
  std::vector<double> coverage_levels{0.1, 0.05, 0.01};
  std::vector<double> alpha_sweep;  // extra HPD levels for M_hat frequencies
  std::size_t grid_size = kDefaultGridSize;
  double mode_threshold = kDefaultModeThreshold;
  EBConfig eb;

  void validate() const {
    if (replicates < 1) throw InvalidInput("simulation: replicates must be >= 1");
    if (!(sigma > 0.0)) throw InvalidInput("simulation: sigma must be positive");
    if (n < 10) throw InvalidInput("simulation: n must be >= 10");
    for (double a : coverage_levels)
      if (!(a > 0.0 && a < 1.0)) throw InvalidInput("simulation: coverage levels must lie in (0, 1)");
    for (double a : alpha_sweep)
      if (!(a > 0.0 && a < 1.0)) throw InvalidInput("simulation: alpha sweep values must lie in (0, 1)");
    if (!(alpha_hpd > 0.0 && alpha_hpd < 1.0) || !(alpha_ci > 0.0 && alpha_ci < 1.0)) {
      throw InvalidInput("simulation: alpha values must lie in (0, 1)");
    }
    eb.validate();
  }
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"table1", "table3", "supp-sigma02", "supp-alpha-sweep"};
  return names;
}

/// Named configurations for the Doppler experiments. n and other fields can
/// be overridden afterwards.
inline SimConfig preset(std::string_view name) {
  SimConfig cfg;
  if (name == "table1") {
    cfg.prior = PriorSpec::uniform();
  } else if (name == "table3") {
    cfg.prior = PriorSpec::uniform();
    cfg.coverage_levels = {0.1, 0.05, 0.01};
  } else if (name == "supp-sigma02") {
    cfg.sigma = 0.2;
    cfg.prior = PriorSpec(2.0, 3.0);
  } else if (name == "supp-alpha-sweep") {
    cfg.prior = PriorSpec(2.0, 3.0);
    cfg.alpha_sweep = {0.001, 0.005, 0.01, 0.03, 0.05, 0.1};
  } else {
    throw InvalidInput("unknown preset '" + std::string(name) + "'");
  }
  return cfg;
}

/// Theoretical regularization schedule lambda = n^{-1/2 + beta} (log n)^{1/2 + a}.
inline double schedule_lambda(std::size_t n, double beta, double a) {
  if (n < 3) throw InvalidInput("schedule_lambda: n must be >= 3");
  if (!(beta > 0.0 && beta < 0.5)) throw InvalidInput("schedule_lambda: beta must lie in (0, 1/2)");
  if (!(a > 0.0)) throw InvalidInput("schedule_lambda: a must be positive");
  const double ln = std::log(static_cast<double>(n));
  return std::exp((beta - 0.5) * ln + (0.5 + a) * std::log(ln));
}

/// The beta for which schedule_lambda(n, beta, a) equals `lambda`; may fall
/// outside (0, 1/2) when lambda is off-schedule (e.g. an empirical Bayes choice).
inline double implied_beta(double lambda, std::size_t n, double a) {
  if (n < 3) throw InvalidInput("implied_beta: n must be >= 3");
  if (!(lambda > 0.0) || !(a > 0.0)) throw InvalidInput("implied_beta: lambda and a must be positive");
  const double ln = std::log(static_cast<double>(n));
  return 0.5 + (std::log(lambda) - (0.5 + a) * std::log(ln)) / ln;
}

/// x_i = (i - 0.5) / n, y_i = doppler(x_i) + sigma * eps_i, eps_i drawn from
/// the counter generator keyed by (seed, replicate_index, i).
inline Dataset generate_dataset(const SimConfig& cfg, std::size_t replicate_index) {
  const CounterRng rng(cfg.seed, replicate_index);
  std::vector<double> x(cfg.n), y(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    x[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(cfg.n);
    y[i] = doppler(x[i]) + cfg.sigma * rng.normal(i);
  }
  return Dataset(std::move(x), std::move(y));
}

struct Alignment {
  std::array<std::optional<double>, 3> slots;
  std::array<std::size_t, 3> counts{};  // estimates falling in each interval
};

/// Assigns estimates to the intervals (0, b1), (b1, b2), (b2, 1) with
/// b_i = (t_i + t_{i+1}) / 2; several estimates in one interval are averaged,
/// an empty interval yields no value.
inline Alignment align_estimates(const std::vector<double>& estimates, const std::array<double, 3>& truths) {
  const std::array<double, 4> bounds{0.0, 0.5 * (truths[0] + truths[1]), 0.5 * (truths[1] + truths[2]), 1.0};
  Alignment out;
  std::array<double, 3> sums{};
  for (double e : estimates) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (e > bounds[k] && e < bounds[k + 1]) {
        sums[k] += e;
        ++out.counts[k];
        break;
      }
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (out.counts[k] > 0) out.slots[k] = sums[k] / static_cast<double>(out.counts[k]);
  }
  return out;
}

struct LevelCoverage {
  double alpha = 0.0;
  std::array<bool, 3> marginal{};
  bool joint = false;
  friend bool operator==(const LevelCoverage&, const LevelCoverage&) = default;
};

struct ReplicateResult {
  std::size_t index = 0;
  bool ok = false;
  std::string failure;
  Hyperparams hyper;
  double log_marginal = 0.0;
  std::size_t m_hat = 0;
  std::size_t posterior_mode_count = 0;  // above-threshold interior local maxima
  std::vector<double> posterior_modes;    // one per HPD segment
  std::vector<double> t_hats;             // mu_hat_f extremum per HPD segment
  Alignment aligned_modes;
  Alignment aligned_t_hats;
  std::vector<LevelCoverage> coverage;  // only when m_hat == 3
  std::array<double, 3> spreads{};      // restricted posterior spread per alignment interval
  std::map<double, std::size_t> m_hat_by_alpha;
  double seconds = 0.0;
};

/// Hyperparameters for one replicate. EB start placement is seeded from the
/// replicate's own seed so results do not depend on scheduling.
inline EBResult select_replicate_hyperparams(const SimConfig& cfg, std::size_t index) {
  EBConfig eb = cfg.eb;
  eb.seed = detail::mix64(cfg.seed ^ detail::mix64(index + 0x5eed));
  return select_hyperparams(generate_dataset(cfg, index), eb);
}

/// Full pipeline for one replicate: generate, select hyperparameters (unless
/// given), fit, posterior, HPD, estimates, intervals. Failures are recorded,
/// not thrown.
inline ReplicateResult analyze_replicate(const SimConfig& cfg, std::size_t index,
                                         std::optional<Hyperparams> fixed = std::nullopt) {
  const auto start = std::chrono::steady_clock::now();
  ReplicateResult r;
  r.index = index;
  try {
    Dataset data = generate_dataset(cfg, index);
    if (fixed) {
      r.hyper = *fixed;
    } else {
      const EBResult eb = select_replicate_hyperparams(cfg, index);
      r.hyper = eb.hyper;
    }
    const GPModel model = fit(std::move(data), r.hyper);
    r.log_marginal = model.log_marginal_unconstrained();
    const PosteriorGrid grid = compute_posterior(model, cfg.prior, cfg.grid_size);
    r.posterior_mode_count = posterior_modes(grid, cfg.mode_threshold).size();
    const HpdResult hpd = hpd_region(grid, cfg.alpha_hpd);
    r.m_hat = count_extrema(hpd);
    for (const auto& seg : hpd.segments) {
      r.posterior_modes.push_back(seg.mode);
      const auto roots = gp_extrema_in_segment(model, grid, seg);
      double t = seg.mode;
      if (!roots.empty()) t = std::accumulate(roots.begin(), roots.end(), 0.0) / static_cast<double>(roots.size());
      r.t_hats.push_back(t);
    }
    r.aligned_modes = align_estimates(r.posterior_modes, kDopplerExtrema);
    r.aligned_t_hats = align_estimates(r.t_hats, kDopplerExtrema);
    const std::array<double, 4> bounds{0.0, 0.5 * (kDopplerExtrema[0] + kDopplerExtrema[1]),
                                       0.5 * (kDopplerExtrema[1] + kDopplerExtrema[2]), 1.0};
    for (std::size_t k = 0; k < 3; ++k) r.spreads[k] = restricted_spread(grid, bounds[k], bounds[k + 1]);
    for (double a : cfg.alpha_sweep) r.m_hat_by_alpha[a] = count_extrema(hpd_region(grid, a));
    if (r.m_hat == 3) {
      for (double a : cfg.coverage_levels) {
        LevelCoverage c;
        c.alpha = a;
        c.joint = true;
        for (std::size_t k = 0; k < 3; ++k) {
          const ConfidenceInterval marginal = confidence_interval(model, r.t_hats[k], a);
          const ConfidenceInterval joint = confidence_interval(model, r.t_hats[k], a / 3.0);
          c.marginal[k] = marginal.contains(kDopplerExtrema[k]);
          c.joint = c.joint && joint.contains(kDopplerExtrema[k]);
        }
        r.coverage.push_back(c);
      }
    }
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.failure = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

struct CoverageRow {
  double alpha = 0.0;
  std::array<std::optional<double>, 3> marginal;
  std::optional<double> joint;
  std::size_t conditioning_count = 0;  // replicates with M_hat = 3
  friend bool operator==(const CoverageRow&, const CoverageRow&) = default;
};

struct Multiplicity {
  std::array<std::size_t, 3> missing{};
  std::array<std::size_t, 3> multiple{};
  friend bool operator==(const Multiplicity&, const Multiplicity&) = default;
};

struct RuntimeStats {
  double total_seconds = 0.0;
  double mean_replicate_seconds = 0.0;
  double max_replicate_seconds = 0.0;
  std::size_t workers = 1;
  friend bool operator==(const RuntimeStats&, const RuntimeStats&) = default;
};

struct FailureRecord {
  std::size_t index = 0;
  std::string reason;
  friend bool operator==(const FailureRecord&, const FailureRecord&) = default;
};

struct SimulationReport {
  std::size_t n = 0;
  double sigma = 0.0;
  std::size_t replicates = 0;
  std::uint64_t seed = 0;
  double prior_a = 1.0;
  double prior_b = 1.0;
  double alpha_hpd = 0.05;
  double alpha_ci = 0.05;
  // Keys are M_hat values; counts are over successful replicates.
  std::map<std::size_t, std::size_t> m_hat_histogram;
  std::map<double, std::map<std::size_t, std::size_t>> m_hat_by_alpha;
  std::array<std::optional<double>, 3> rmse_x100;         // posterior-mode estimates
  std::array<std::optional<double>, 3> rmse_x100_gp_root;  // mu_hat_f extremum estimates
  Multiplicity multiplicity;
  std::vector<CoverageRow> coverage;
  std::size_t ordering_eligible = 0;  // replicates with M_hat = 3
  std::size_t ordering_holds = 0;     // ... whose spreads increase as curvature decreases
  std::array<double, 3> mean_hyper{};  // sigma, tau, h averaged over successful replicates
  std::vector<FailureRecord> failures;
  RuntimeStats runtime;

  double m_hat_fraction(std::size_t m) const {
    const auto it = m_hat_histogram.find(m);
    const std::size_t ok = replicates - failures.size();
    return it == m_hat_histogram.end() || ok == 0 ? 0.0 : static_cast<double>(it->second) / static_cast<double>(ok);
  }

  friend bool operator==(const SimulationReport&, const SimulationReport&) = default;
};

/// Aggregates per-replicate results in index order.
inline SimulationReport aggregate(const SimConfig& cfg, const std::vector<ReplicateResult>& results) {
  SimulationReport rep;
  rep.n = cfg.n;
  rep.sigma = cfg.sigma;
  rep.replicates = results.size();
  rep.seed = cfg.seed;
  rep.prior_a = cfg.prior.a();
  rep.prior_b = cfg.prior.b();
  rep.alpha_hpd = cfg.alpha_hpd;
  rep.alpha_ci = cfg.alpha_ci;

  std::array<double, 3> sq_mode{}, sq_root{};
  std::array<std::size_t, 3> cnt_mode{}, cnt_root{};
  std::vector<CoverageRow> cov(cfg.coverage_levels.size());
  std::vector<std::array<std::size_t, 4>> cov_hits(cfg.coverage_levels.size());
  for (std::size_t l = 0; l < cov.size(); ++l) cov[l].alpha = cfg.coverage_levels[l];
  std::size_t ok = 0;
  double max_s = 0.0, sum_s = 0.0;

  for (const ReplicateResult& r : results) {
    sum_s += r.seconds;
    max_s = std::max(max_s, r.seconds);
    if (!r.ok) {
      rep.failures.push_back({r.index, r.failure});
      continue;
    }
    ++ok;
    ++rep.m_hat_histogram[r.m_hat];
    for (const auto& [a, m] : r.m_hat_by_alpha) ++rep.m_hat_by_alpha[a][m];
    rep.mean_hyper[0] += std::sqrt(r.hyper.sigma2);
    rep.mean_hyper[1] += std::sqrt(r.hyper.prior_scale2(cfg.n));
    rep.mean_hyper[2] += r.hyper.h;
    for (std::size_t k = 0; k < 3; ++k) {
      if (r.aligned_modes.counts[k] == 0) ++rep.multiplicity.missing[k];
      if (r.aligned_modes.counts[k] > 1) ++rep.multiplicity.multiple[k];
      if (r.aligned_modes.slots[k]) {
        const double e = *r.aligned_modes.slots[k] - kDopplerExtrema[k];
        sq_mode[k] += e * e;
        ++cnt_mode[k];
      }
      if (r.aligned_t_hats.slots[k]) {
        const double e = *r.aligned_t_hats.slots[k] - kDopplerExtrema[k];
        sq_root[k] += e * e;
        ++cnt_root[k];
      }
    }
    if (r.m_hat == 3) {
      ++rep.ordering_eligible;
      if (r.spreads[0] < r.spreads[1] && r.spreads[1] < r.spreads[2]) ++rep.ordering_holds;
      for (std::size_t l = 0; l < cov.size() && l < r.coverage.size(); ++l) {
        ++cov[l].conditioning_count;
        for (std::size_t k = 0; k < 3; ++k) cov_hits[l][k] += r.coverage[l].marginal[k] ? 1 : 0;
        cov_hits[l][3] += r.coverage[l].joint ? 1 : 0;
      }
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (cnt_mode[k] > 0) rep.rmse_x100[k] = 100.0 * std::sqrt(sq_mode[k] / static_cast<double>(cnt_mode[k]));
    if (cnt_root[k] > 0) rep.rmse_x100_gp_root[k] = 100.0 * std::sqrt(sq_root[k] / static_cast<double>(cnt_root[k]));
  }
  for (std::size_t l = 0; l < cov.size(); ++l) {
    const double denom = static_cast<double>(cov[l].conditioning_count);
    if (cov[l].conditioning_count > 0) {
      for (std::size_t k = 0; k < 3; ++k) cov[l].marginal[k] = static_cast<double>(cov_hits[l][k]) / denom;
      cov[l].joint = static_cast<double>(cov_hits[l][3]) / denom;
    }
  }
  rep.coverage = std::move(cov);
  if (ok > 0)
    for (double& v : rep.mean_hyper) v /= static_cast<double>(ok);
  rep.runtime.max_replicate_seconds = max_s;
  rep.runtime.mean_replicate_seconds = results.empty() ? 0.0 : sum_s / static_cast<double>(results.size());
  return rep;
}

/// Runs `fn(i)` for i in [0, count) on up to `workers` threads; results are
/// stored by index.
template <class Result, class Fn>
std::vector<Result> parallel_map(std::size_t count, std::size_t workers, Fn&& fn) {
  std::vector<Result> out(count);
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) out[i] = fn(i);
      });
    }
  }
  return out;
}

inline std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Replicates run independently on `workers` threads; aggregation is in index
/// order, so the report does not depend on scheduling. `fixed_hyper`, when
/// given, supplies precomputed hyperparameters per replicate.
inline SimulationReport run_replications(const SimConfig& cfg, std::size_t workers = 1,
                                         const std::vector<Hyperparams>* fixed_hyper = nullptr) {
  cfg.validate();
  if (fixed_hyper && fixed_hyper->size() < cfg.replicates) {
    throw InvalidInput("run_replications: fewer precomputed hyperparameters than replicates");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto results = parallel_map<ReplicateResult>(cfg.replicates, workers, [&](std::size_t i) {
    return analyze_replicate(cfg, i, fixed_hyper ? std::optional<Hyperparams>((*fixed_hyper)[i]) : std::nullopt);
  });
  SimulationReport rep = aggregate(cfg, results);
  rep.runtime.workers = workers;
  rep.runtime.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace extrema_gp
