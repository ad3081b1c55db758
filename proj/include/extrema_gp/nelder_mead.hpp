#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace extrema_gp {

struct NelderMeadOptions {
  int max_iters = 400;
  double rel_tol = 1e-8;      // stop when f spread <= rel_tol * (|f_best| + 1e-300)
  double step_fraction = 0.1; // initial simplex edge as a fraction of the box width
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
};

/// Box-constrained Nelder-Mead minimization. Trial points are projected
/// onto [lower, upper]; non-finite objective values are treated as +inf.
template <class Objective>
NelderMeadResult nelder_mead(Objective&& f, const Eigen::VectorXd& start, const Eigen::VectorXd& lower,
                             const Eigen::VectorXd& upper, const NelderMeadOptions& opt = {}) {
  const Eigen::Index d = start.size();
  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5, kShrink = 0.5;
  NelderMeadResult res;

  auto project = [&](Eigen::VectorXd p) { return p.cwiseMax(lower).cwiseMin(upper).eval(); };
  auto eval = [&](const Eigen::VectorXd& p) {
    ++res.evaluations;
    const double v = f(p);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(d + 1));
  std::vector<double> vals(pts.size());
  pts[0] = project(start);
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::VectorXd p = pts[0];
    const double step = opt.step_fraction * (upper[i] - lower[i]);
    // step away from the nearer bound so the vertex stays distinct
    p[i] += (p[i] + step <= upper[i]) ? step : -step;
    pts[static_cast<std::size_t>(i + 1)] = project(p);
  }
  for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = eval(pts[i]);

  std::vector<std::size_t> order(pts.size());
  for (; res.iterations < opt.max_iters; ++res.iterations) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    const double spread = vals[worst] - vals[best];
    if (std::isfinite(spread) && spread <= opt.rel_tol * (std::abs(vals[best]) + 1e-300)) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) centroid += pts[order[i]];
    centroid /= static_cast<double>(d);

    const Eigen::VectorXd xr = project(centroid + kReflect * (centroid - pts[worst]));
    const double fr = eval(xr);
    if (fr < vals[best]) {
      const Eigen::VectorXd xe = project(centroid + kExpand * (xr - centroid));
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe, vals[worst] = fe;
      } else {
        pts[worst] = xr, vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr, vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Eigen::VectorXd xc = outside ? project(centroid + kContract * (xr - centroid))
                                       : project(centroid + kContract * (pts[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc, vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = project(pts[best] + kShrink * (pts[i] - pts[best]));
      vals[i] = eval(pts[i]);
    }
  }
  const auto it = std::min_element(vals.begin(), vals.end());
  res.x = pts[static_cast<std::size_t>(it - vals.begin())];
  res.value = *it;
  return res;
}

}  // namespace extrema_gp
