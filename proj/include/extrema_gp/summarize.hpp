#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include "extrema_gp/error.hpp"
#include "extrema_gp/gp_fit.hpp"
#include "extrema_gp/normal.hpp"
#include "extrema_gp/posterior.hpp"

namespace extrema_gp {

struct HpdSegment {
  double lo = 0.0;  // left edge of the first included cell
  double hi = 0.0;  // right edge of the last included cell
  std::size_t first_cell = 0;
  std::size_t last_cell = 0;
  double mode = 0.0;  // grid point of maximal density inside the segment
  double mass = 0.0;
  bool boundary = false;  // touches the first or last grid cell
};

struct HpdResult {
  double level = 0.0;  // 1 - alpha
  double threshold = 0.0;
  double mass = 0.0;
  bool degenerate = false;
  std::vector<HpdSegment> segments;

  std::vector<double> modes() const {
    std::vector<double> m;
    for (const auto& s : segments) m.push_back(s.mode);
    return m;
  }
};

/// Highest posterior density region by water-filling: cells are added in
/// order of decreasing density until their mass reaches 1 - alpha; the
/// segments are the maximal runs of included cells.
inline HpdResult hpd_region(const PosteriorGrid& grid, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("HPD alpha must lie in (0, 1)");
  const std::size_t n = grid.size();
  if (n == 0) throw InvalidInput("HPD region of an empty grid");
  HpdResult out;
  out.level = 1.0 - alpha;
  std::vector<char> included(n, 0);

  const auto [lo_it, hi_it] = std::minmax_element(grid.density.begin(), grid.density.end());
  if (*hi_it - *lo_it <= 1e-12 * *hi_it) {
    out.degenerate = true;
    out.threshold = *lo_it;
    std::fill(included.begin(), included.end(), 1);
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return grid.density[a] > grid.density[b]; });
    double mass = 0.0;
    for (std::size_t idx : order) {
      included[idx] = 1;
      mass += grid.density[idx] * grid.grid_step;
      out.threshold = grid.density[idx];
      if (mass >= out.level) break;
    }
  }

  for (std::size_t i = 0; i < n;) {
    if (!included[i]) {
      ++i;
      continue;
    }
    HpdSegment seg;
    seg.first_cell = i;
    std::size_t best = i;
    while (i < n && included[i]) {
      seg.mass += grid.density[i] * grid.grid_step;
      if (grid.density[i] > grid.density[best]) best = i;
      ++i;
    }
    seg.last_cell = i - 1;
    seg.lo = grid.cell_lo(seg.first_cell);
    seg.hi = grid.cell_hi(seg.last_cell);
    seg.mode = grid.ts[best];
    seg.boundary = seg.first_cell == 0 || seg.last_cell == n - 1;
    out.mass += seg.mass;
    out.segments.push_back(seg);
  }
  return out;
}

/// Estimated number of local extrema: the number of HPD segments.
inline std::size_t count_extrema(const HpdResult& hpd) { return hpd.segments.size(); }

inline constexpr int kRootSubdivision = 10;

/// Zeros of mu_hat_{f'} inside [lo, hi]: sign changes on a sub-grid of
/// subdivision * (posterior cells in the segment) intervals, each refined by
/// bisection to |mu_hat_{f'}| < 1e-12 or 60 halvings. Roots where the
/// curvature mu_hat'_{f'} vanishes are dropped.
inline std::vector<double> gp_extrema_in_segment(const GPModel& model, double lo, double hi, std::size_t cells,
                                                 int subdivision = kRootSubdivision) {
  if (!(lo < hi)) throw InvalidInput("root scan: empty segment");
  const std::size_t m = std::max<std::size_t>(1, cells) * static_cast<std::size_t>(std::max(1, subdivision));
  const double step = (hi - lo) / static_cast<double>(m);
  std::vector<double> roots;
  auto at = [&](std::size_t i) { return i == m ? hi : lo + static_cast<double>(i) * step; };
  double left_t = at(0);
  double left_v = model.mean_fprime(left_t, 0);
  if (left_v == 0.0) roots.push_back(left_t);
  for (std::size_t i = 1; i <= m; ++i) {
    const double right_t = at(i);
    const double right_v = model.mean_fprime(right_t, 0);
    if (right_v == 0.0) {
      roots.push_back(right_t);
    } else if (left_v != 0.0 && std::signbit(left_v) != std::signbit(right_v)) {
      double a = left_t, b = right_t, fa = left_v;
      double mid = 0.5 * (a + b);
      for (int it = 0; it < 60; ++it) {
        mid = 0.5 * (a + b);
        const double fm = model.mean_fprime(mid, 0);
        if (std::abs(fm) < 1e-12 || mid == a || mid == b) break;
        if (std::signbit(fm) == std::signbit(fa)) {
          a = mid;
          fa = fm;
        } else {
          b = mid;
        }
      }
      roots.push_back(mid);
    }
    left_t = right_t;
    left_v = right_v;
  }
  std::erase_if(roots, [&](double r) { return model.mean_fprime(r, 1) == 0.0; });
  return roots;
}

inline std::vector<double> gp_extrema_in_segment(const GPModel& model, const PosteriorGrid& grid,
                                                 const HpdSegment& seg, int subdivision = kRootSubdivision) {
  if (seg.first_cell > seg.last_cell || seg.last_cell >= grid.size()) {
    throw InvalidInput("root scan: segment lies outside the posterior grid");
  }
  return gp_extrema_in_segment(model, seg.lo, seg.hi, seg.last_cell - seg.first_cell + 1, subdivision);
}

inline constexpr double kCurvatureFloor = 1e-10;

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double bias_correction = 0.0;  // Delta_hat(t_hat) / mu_hat'_{f'}(t_hat)
  double curvature = 0.0;        // mu_hat'_{f'}(t_hat)
  double alpha = 0.0;

  double center() const { return 0.5 * (lo + hi); }
  double half_width() const { return 0.5 * (hi - lo); }
  bool contains(double t) const { return lo <= t && t <= hi; }
};

/// Plug-in interval for an extremum located at t_hat:
///   t_hat + Delta_hat / c  +-  z_{alpha/2} sigma sqrt(K_10 A^{-2} K_10^T) / |c|,
/// with c = mu_hat'_{f'}(t_hat) and Delta_hat(t) = K_10(t, X) A^{-1} mu_hat_f(X).
inline ConfidenceInterval confidence_interval(const GPModel& model, double t_hat, double alpha) {
  const double z = normal_upper_quantile(alpha / 2.0);
  const double curvature = model.mean_fprime(t_hat, 1);
  if (!(std::abs(curvature) > kCurvatureFloor)) {
    std::ostringstream os;
    os.precision(17);
    os << "confidence interval undefined: curvature " << curvature << " at t_hat = " << t_hat
       << " is below the floor " << kCurvatureFloor;
    throw NumericalError(os.str());
  }
  const Eigen::VectorXd k10 = deriv_row(model.kernel(), 1, t_hat, model.data().x());
  const Eigen::VectorXd w = model.solve(k10);  // A^{-1} K_10^T
  // K(X,X) alpha = y - (n lambda + jitter) alpha
  const Eigen::VectorXd fitted = model.data().y_vector() - (model.n_lambda() + model.jitter()) * model.weights();
  const double delta = w.dot(fitted);
  const double half = z * std::sqrt(model.hyper().sigma2) * w.norm() / std::abs(curvature);
  ConfidenceInterval ci;
  ci.bias_correction = delta / curvature;
  ci.curvature = curvature;
  ci.alpha = alpha;
  ci.lo = t_hat + ci.bias_correction - half;
  ci.hi = t_hat + ci.bias_correction + half;
  return ci;
}

/// Bonferroni joint intervals: every marginal recomputed at alpha / M.
inline std::vector<ConfidenceInterval> joint_confidence(const GPModel& model, const std::vector<double>& t_hats,
                                                        double alpha) {
  if (t_hats.empty()) throw InvalidInput("joint confidence set needs at least one extremum");
  std::vector<ConfidenceInterval> out;
  const double level = alpha / static_cast<double>(t_hats.size());
  for (double t : t_hats) out.push_back(confidence_interval(model, t, level));
  return out;
}

enum class ExtremumKind { Max, Min };
enum class EstimateSource { GpRoot, GpRootAverage, PosteriorMode };

inline const char* to_string(ExtremumKind k) { return k == ExtremumKind::Max ? "max" : "min"; }
inline const char* to_string(EstimateSource s) {
  switch (s) {
    case EstimateSource::GpRoot: return "gp_root";
    case EstimateSource::GpRootAverage: return "gp_root_average";
    case EstimateSource::PosteriorMode: return "posterior_mode";
  }
  return "unknown";
}

struct ExtremumEstimate {
  double t_hat = 0.0;           // mu_hat_f extremum in the segment (average if several)
  double posterior_mode = 0.0;  // argmax of the posterior density in the segment
  ExtremumKind kind = ExtremumKind::Max;
  double curvature_hat = 0.0;
  std::optional<ConfidenceInterval> ci;        // marginal, at alpha_ci
  std::optional<ConfidenceInterval> joint_ci;  // Bonferroni, at alpha_ci / M
  bool boundary_flag = false;
  EstimateSource source = EstimateSource::GpRoot;
  std::size_t root_count = 0;
  std::string note;  // why a CI is missing, when it is
};

struct SummaryOptions {
  double alpha_hpd = 0.05;
  double alpha_ci = 0.05;
  int root_subdivision = kRootSubdivision;
};

struct ExtremaReport {
  HpdResult hpd;
  std::size_t m_hat = 0;
  std::vector<ExtremumEstimate> estimates;

  std::vector<double> modes() const { return hpd.modes(); }
  std::vector<double> t_hats() const {
    std::vector<double> v;
    for (const auto& e : estimates) v.push_back(e.t_hat);
    return v;
  }
};

/// HPD segments, per-segment point estimates (posterior mode and mu_hat_f
/// extremum), marginal and Bonferroni-joint plug-in intervals.
inline ExtremaReport summarize(const GPModel& model, const PosteriorGrid& grid, const SummaryOptions& opt = {}) {
  ExtremaReport rep;
  rep.hpd = hpd_region(grid, opt.alpha_hpd);
  rep.m_hat = count_extrema(rep.hpd);
  for (const auto& seg : rep.hpd.segments) {
    ExtremumEstimate est;
    est.posterior_mode = seg.mode;
    est.boundary_flag = seg.boundary;
    const std::vector<double> roots = gp_extrema_in_segment(model, grid, seg, opt.root_subdivision);
    est.root_count = roots.size();
    if (roots.empty()) {
      est.t_hat = seg.mode;
      est.source = EstimateSource::PosteriorMode;
      est.note = "no sign change of the posterior mean derivative in segment; using posterior mode";
    } else {
      est.t_hat = std::accumulate(roots.begin(), roots.end(), 0.0) / static_cast<double>(roots.size());
      est.source = roots.size() == 1 ? EstimateSource::GpRoot : EstimateSource::GpRootAverage;
    }
    est.curvature_hat = model.mean_fprime(est.t_hat, 1);
    est.kind = est.curvature_hat < 0.0 ? ExtremumKind::Max : ExtremumKind::Min;
    try {
      est.ci = confidence_interval(model, est.t_hat, opt.alpha_ci);
      est.joint_ci = confidence_interval(model, est.t_hat, opt.alpha_ci / static_cast<double>(rep.m_hat));
    } catch (const NumericalError& e) {
      est.note = e.what();
    }
    rep.estimates.push_back(std::move(est));
  }
  return rep;
}

}  // namespace extrema_gp
