#pragma once

#include <boost/math/distributions/normal.hpp>

#include "extrema_gp/error.hpp"

namespace extrema_gp {

/// z such that P(Z > z) = p for standard normal Z.
inline double normal_upper_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidInput("normal quantile: probability must lie in (0, 1)");
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(boost::math::complement(standard, p));
}

inline double normal_cdf(double z, double mean = 0.0, double sd = 1.0) {
  return boost::math::cdf(boost::math::normal_distribution<double>(mean, sd), z);
}

}  // namespace extrema_gp
