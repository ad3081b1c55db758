#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "extrema_gp/error.hpp"

namespace extrema_gp {

enum class KernelFamily { SquaredExponential };

// Test hook used by the validation battery as a negative control. Never set
// outside of tests and `extrema_gp validate --corrupt-kernel`.
enum class KernelFault { None, FlipFirstDerivative };

namespace detail {

inline constexpr int kMaxKernelOrder = 4;
inline constexpr int kMaxHermite = 2 * kMaxKernelOrder;

// Coefficients of the probabilists' Hermite polynomials He_m, m = 0..8,
// lowest degree first. He_{m+1}(u) = u He_m(u) - m He_{m-1}(u).
inline constexpr auto kHermite = [] {
  std::array<std::array<double, kMaxHermite + 1>, kMaxHermite + 1> c{};
  c[0][0] = 1.0;
  c[1][1] = 1.0;
  for (int m = 1; m < kMaxHermite; ++m) {
    for (int d = 0; d <= kMaxHermite; ++d) {
      double v = -m * c[m - 1][d];
      if (d > 0) v += c[m][d - 1];
      c[m + 1][d] = v;
    }
  }
  return c;
}();

inline double hermite(int m, double u) {
  double acc = 0.0;
  for (int d = m; d >= 0; --d) acc = acc * u + kHermite[m][d];
  return acc;
}

}  // namespace detail

/// Stationary covariance kernel K(x, x') = exp{-(x - x')^2 / (2 h^2)} with
/// closed-form mixed partials
///
///   K_jl(x, x') = d^{j+l} K / dx^j dx'^l
///               = (-1)^j h^{-(j+l)} He_{j+l}(u) exp(-u^2 / 2),  u = (x - x') / h,
///
/// for j, l in 0..4. Immutable; all member functions are thread-safe.
class KernelSpec {
 public:
  explicit KernelSpec(double bandwidth, KernelFamily family = KernelFamily::SquaredExponential,
                      KernelFault fault = KernelFault::None)
      : family_(family), bandwidth_(bandwidth), fault_(fault) {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
      throw InvalidInput("kernel bandwidth must be positive and finite, got " + std::to_string(bandwidth));
    }
    inv_h_pow_[0] = 1.0;
    for (int m = 1; m <= detail::kMaxHermite; ++m) inv_h_pow_[m] = inv_h_pow_[m - 1] / bandwidth;
  }

  KernelFamily family() const noexcept { return family_; }
  double bandwidth() const noexcept { return bandwidth_; }
  KernelFault fault() const noexcept { return fault_; }

  /// K_jl(x, x'). Throws InvalidInput for orders outside 0..4.
  double eval(int j, int l, double x, double xp) const {
    if (j < 0 || l < 0 || j > detail::kMaxKernelOrder || l > detail::kMaxKernelOrder) {
      throw InvalidInput("kernel derivative order (" + std::to_string(j) + ", " + std::to_string(l) +
                         ") outside supported range 0..4");
    }
    return eval_unchecked(j, l, x, xp);
  }

  double eval_unchecked(int j, int l, double x, double xp) const noexcept {
    const double u = (x - xp) / bandwidth_;
    const double envelope = std::exp(-0.5 * u * u);
    const int m = j + l;
    double v = inv_h_pow_[m] * detail::hermite(m, u) * envelope;
    if (j % 2 == 1) v = -v;
    if (fault_ == KernelFault::FlipFirstDerivative && j == 1 && l == 0) v = -v;
    return v;
  }

  /// K_11(t, t) = 1 / h^2 for every t.
  double k11_diagonal() const noexcept { return inv_h_pow_[2]; }

 private:
  KernelFamily family_;
  double bandwidth_;
  KernelFault fault_;
  std::array<double, detail::kMaxHermite + 1> inv_h_pow_{};
};

/// Gram matrix K(X, X). The lower triangle is computed and mirrored, so the
/// result is exactly symmetric.
inline Eigen::MatrixXd gram(const KernelSpec& spec, std::span<const double> xs) {
  if (xs.empty()) throw InvalidInput("gram: design is empty");
  const auto n = static_cast<Eigen::Index>(xs.size());
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    g(c, c) = spec.eval_unchecked(0, 0, xs[c], xs[c]);
    for (Eigen::Index r = c + 1; r < n; ++r) {
      const double v = spec.eval_unchecked(0, 0, xs[r], xs[c]);
      g(r, c) = v;
      g(c, r) = v;
    }
  }
  return g;
}

/// Row (K_j0(t, X_1), ..., K_j0(t, X_n)).
inline Eigen::VectorXd deriv_row(const KernelSpec& spec, int j, double t, std::span<const double> xs) {
  if (j < 0 || j > detail::kMaxKernelOrder) {
    throw InvalidInput("deriv_row: order " + std::to_string(j) + " outside supported range 0..4");
  }
  Eigen::VectorXd row(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) row[static_cast<Eigen::Index>(i)] = spec.eval_unchecked(j, 0, t, xs[i]);
  return row;
}

/// Column (K_0l(X_1, t), ..., K_0l(X_n, t))^T.
inline Eigen::VectorXd deriv_col(const KernelSpec& spec, int l, std::span<const double> xs, double t) {
  if (l < 0 || l > detail::kMaxKernelOrder) {
    throw InvalidInput("deriv_col: order " + std::to_string(l) + " outside supported range 0..4");
  }
  Eigen::VectorXd col(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) col[static_cast<Eigen::Index>(i)] = spec.eval_unchecked(0, l, xs[i], t);
  return col;
}

}  // namespace extrema_gp
