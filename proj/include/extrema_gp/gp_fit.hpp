#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "extrema_gp/error.hpp"
#include "extrema_gp/kernel.hpp"

namespace extrema_gp {

enum class DuplicatePolicy { Reject, Allow };

/// Noisy samples (x_i, y_i) with x_i in [0, 1]. Design points need not be
/// sorted; repeated x values are accepted only under DuplicatePolicy::Allow.
class Dataset {
 public:
  Dataset(std::vector<double> x, std::vector<double> y, DuplicatePolicy duplicates = DuplicatePolicy::Reject)
      : x_(std::move(x)), y_(std::move(y)), duplicates_(duplicates) {
    if (x_.size() != y_.size()) {
      throw InvalidInput("dataset: x has " + std::to_string(x_.size()) + " entries but y has " +
                         std::to_string(y_.size()));
    }
    if (x_.size() < 2) throw InvalidInput("dataset: need at least 2 observations");
    for (std::size_t i = 0; i < x_.size(); ++i) {
      if (!(x_[i] >= 0.0 && x_[i] <= 1.0)) {
        throw InvalidInput("dataset: x[" + std::to_string(i) + "] = " + std::to_string(x_[i]) + " outside [0, 1]");
      }
      if (!std::isfinite(y_[i])) throw InvalidInput("dataset: y[" + std::to_string(i) + "] is not finite");
    }
    if (duplicates_ == DuplicatePolicy::Reject) {
      std::vector<double> sorted = x_;
      std::sort(sorted.begin(), sorted.end());
      if (auto it = std::adjacent_find(sorted.begin(), sorted.end()); it != sorted.end()) {
        throw InvalidInput("dataset: duplicate design point x = " + std::to_string(*it) +
                           " (allow duplicates explicitly to accept it)");
      }
    }
  }

  std::span<const double> x() const noexcept { return x_; }
  std::span<const double> y() const noexcept { return y_; }
  std::size_t size() const noexcept { return x_.size(); }
  DuplicatePolicy duplicates() const noexcept { return duplicates_; }

  Eigen::Map<const Eigen::VectorXd> y_vector() const {
    return {y_.data(), static_cast<Eigen::Index>(y_.size())};
  }

 private:
  std::vector<double> x_;
  std::vector<double> y_;
  DuplicatePolicy duplicates_;
};

/// Regularization lambda, bandwidth h, noise variance sigma2. The prior on f
/// is GP(0, sigma2 (n lambda)^{-1} K), so the prior scale tau^2 equals
/// sigma2 / (n lambda).
struct Hyperparams {
  double lambda = 0.0;
  double h = 0.0;
  double sigma2 = 0.0;

  void validate() const {
    auto bad = [](double v) { return !(v > 0.0) || !std::isfinite(v); };
    if (bad(lambda) || bad(h) || bad(sigma2)) {
      std::ostringstream os;
      os << "hyperparameters must be positive and finite (lambda=" << lambda << ", h=" << h
         << ", sigma2=" << sigma2 << ")";
      throw InvalidInput(os.str());
    }
  }

  double prior_scale2(std::size_t n) const { return sigma2 / (static_cast<double>(n) * lambda); }

  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

namespace detail {
inline std::atomic<std::uint64_t> factorization_counter{0};
inline constexpr std::array<double, 5> kJitterLadder{1e-10, 1e-9, 1e-8, 1e-7, 1e-6};
}  // namespace detail

/// Number of O(n^3) factorizations performed by fit() in this process.
inline std::uint64_t factorizations_performed() noexcept { return detail::factorization_counter.load(); }

/// Cholesky factorization with the jitter ladder: on failure add
/// eps * mean(diag(A)) to the diagonal for eps = 1e-10 .. 1e-6.
/// Returns the factor and the absolute jitter that was added.
inline std::pair<Eigen::LLT<Eigen::MatrixXd>, double> factorize_with_jitter(const Eigen::MatrixXd& a) {
  detail::factorization_counter.fetch_add(1, std::memory_order_relaxed);
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return {std::move(llt), 0.0};
  const double scale = a.diagonal().mean();
  for (double eps : detail::kJitterLadder) {
    Eigen::MatrixXd jittered = a;
    jittered.diagonal().array() += eps * scale;
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) return {std::move(llt), eps * scale};
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  std::ostringstream os;
  os << "factorization of K(X,X) + n*lambda*I failed after jitter up to 1e-6 * mean diagonal; smallest pivot "
     << ldlt.vectorD().minCoeff();
  throw NumericalError(os.str());
}

/// Posterior mean and variance of f' (derivative order 0 of f') at a batch of points.
struct FprimeMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

/// Fitted unconstrained GP regression state. A = K(X,X) + n lambda I is
/// factorized once; every query below costs O(n^2) or less.
class GPModel {
 public:
  GPModel(Dataset data, Hyperparams hyper, KernelSpec spec)
      : data_(std::move(data)), hyper_(hyper), spec_(spec) {
    hyper_.validate();
    if (spec_.bandwidth() != hyper_.h) {
      throw InvalidInput("kernel bandwidth does not match hyperparameter h");
    }
    const auto n = static_cast<Eigen::Index>(data_.size());
    n_lambda_ = static_cast<double>(n) * hyper_.lambda;
    Eigen::MatrixXd a = gram(spec_, data_.x());
    a.diagonal().array() += n_lambda_;
    auto [llt, jitter] = factorize_with_jitter(a);
    llt_ = std::move(llt);
    jitter_ = jitter;
    weights_ = llt_.solve(data_.y_vector());
  }

  const Dataset& data() const noexcept { return data_; }
  const Hyperparams& hyper() const noexcept { return hyper_; }
  const KernelSpec& kernel() const noexcept { return spec_; }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  double jitter() const noexcept { return jitter_; }
  double n_lambda() const noexcept { return n_lambda_; }
  std::size_t size() const noexcept { return data_.size(); }

  /// Lower-triangular Cholesky factor L with L L^T = A (+ jitter).
  Eigen::MatrixXd factor() const { return llt_.matrixL(); }

  /// sigma2 (n lambda)^{-1}: the factor that turns A-based quadratic forms into variances.
  double variance_scale() const noexcept { return hyper_.sigma2 / n_lambda_; }

  /// A^{-1} v via two triangular solves.
  Eigen::VectorXd solve(const Eigen::VectorXd& v) const { return llt_.solve(v); }

  /// L^{-1} v.
  Eigen::VectorXd whiten(const Eigen::VectorXd& v) const { return llt_.matrixL().solve(v); }

  double mean_f(double t) const { return deriv_row(spec_, 0, t, data_.x()).dot(weights_); }

  /// k-th derivative of the posterior mean of f', i.e. K_{k+1,0}(t, X) A^{-1} y, k in 0..3.
  double mean_fprime(double t, int k = 0) const {
    check_order(k);
    return deriv_row(spec_, k + 1, t, data_.x()).dot(weights_);
  }

  /// k-th derivative of the posterior variance of f' (general Leibniz rule):
  ///   sigma2 (n lambda)^{-1} sum_i C(k,i) { K_{i+1,k+1-i}(t,t) - K_{i+1,0}(t,X) A^{-1} K_{0,k+1-i}(X,t) }.
  /// For k = 0 a non-positive result throws NumericalError naming t.
  double var_fprime(double t, int k = 0) const {
    check_order(k);
    const auto xs = data_.x();
    std::array<Eigen::VectorXd, 5> rows;
    std::array<Eigen::VectorXd, 5> cols;
    for (int j = 1; j <= k + 1; ++j) {
      rows[j] = whiten(deriv_row(spec_, j, t, xs));
      cols[j] = spec_.fault() == KernelFault::None ? rows[j] : whiten(deriv_col(spec_, j, xs, t));
    }
    double acc = 0.0;
    double binom = 1.0;
    for (int i = 0; i <= k; ++i) {
      const int l = k + 1 - i;
      acc += binom * (spec_.eval_unchecked(i + 1, l, t, t) - rows[i + 1].dot(cols[l]));
      binom = binom * (k - i) / (i + 1);
    }
    const double v = variance_scale() * acc;
    if (k == 0 && !(v > 0.0)) throw_nonpositive_variance(t, v);
    return v;
  }

  /// Batched mean_fprime(t, 0) and var_fprime(t, 0). Uses blocked triangular
  /// solves; results match the scalar queries to rounding.
  FprimeMoments fprime_moments(std::span<const double> ts) const {
    const auto xs = data_.x();
    const auto n = static_cast<Eigen::Index>(xs.size());
    const auto g = static_cast<Eigen::Index>(ts.size());
    FprimeMoments out{Eigen::VectorXd(g), Eigen::VectorXd(g)};
    constexpr Eigen::Index kBlock = 256;
    const double k11 = spec_.k11_diagonal();
    for (Eigen::Index start = 0; start < g; start += kBlock) {
      const Eigen::Index width = std::min(kBlock, g - start);
      Eigen::MatrixXd rows(n, width);
      for (Eigen::Index c = 0; c < width; ++c) {
        const double t = ts[static_cast<std::size_t>(start + c)];
        for (Eigen::Index i = 0; i < n; ++i) rows(i, c) = spec_.eval_unchecked(1, 0, t, xs[i]);
      }
      out.mean.segment(start, width).noalias() = rows.transpose() * weights_;
      Eigen::MatrixXd cols;
      if (spec_.fault() != KernelFault::None) {
        cols.resize(n, width);
        for (Eigen::Index c = 0; c < width; ++c) {
          const double t = ts[static_cast<std::size_t>(start + c)];
          for (Eigen::Index i = 0; i < n; ++i) cols(i, c) = spec_.eval_unchecked(0, 1, xs[i], t);
        }
        llt_.matrixL().solveInPlace(cols);
      }
      llt_.matrixL().solveInPlace(rows);
      for (Eigen::Index c = 0; c < width; ++c) {
        const double q = cols.size() == 0 ? rows.col(c).squaredNorm() : rows.col(c).dot(cols.col(c));
        const double v = variance_scale() * (k11 - q);
        if (!(v > 0.0)) throw_nonpositive_variance(ts[static_cast<std::size_t>(start + c)], v);
        out.variance[start + c] = v;
      }
    }
    return out;
  }

  /// log N(y; 0, sigma2 (n lambda)^{-1} K(X,X) + sigma2 I). The covariance
  /// equals c A with c = sigma2 / (n lambda), so
  ///   log p = -n/2 log(2 pi c) - 1/2 log det A - y^T A^{-1} y / (2 c).
  double log_marginal_unconstrained() const {
    const double n = static_cast<double>(data_.size());
    const double c = variance_scale();
    const Eigen::MatrixXd::ConstDiagonalReturnType diag = llt_.matrixLLT().diagonal();
    const double log_det_a = 2.0 * diag.array().log().sum();
    const double quad = data_.y_vector().dot(weights_);
    return -0.5 * n * std::log(2.0 * std::numbers::pi * c) - 0.5 * log_det_a - 0.5 * quad / c;
  }

 private:
  static void check_order(int k) {
    if (k < 0 || k > 3) throw InvalidInput("derivative order k must be in 0..3, got " + std::to_string(k));
  }

  [[noreturn]] static void throw_nonpositive_variance(double t, double v) {
    std::ostringstream os;
    os.precision(17);
    os << "posterior variance of f' is non-positive (" << v << ") at t = " << t;
    throw NumericalError(os.str());
  }

  Dataset data_;
  Hyperparams hyper_;
  KernelSpec spec_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd weights_;
  double n_lambda_ = 0.0;
  double jitter_ = 0.0;
};

inline GPModel fit(Dataset data, const Hyperparams& hyper) {
  hyper.validate();
  return GPModel(std::move(data), hyper, KernelSpec(hyper.h));
}

inline GPModel fit(Dataset data, const Hyperparams& hyper, const KernelSpec& spec) {
  return GPModel(std::move(data), hyper, spec);
}

namespace validation {

/// Prior covariance of f conditioned on f'(t) = 0:
///   k_t(x, x') = K(x, x') - K_01(x, t) K_11(t, t)^{-1} K_10(t, x').
inline Eigen::MatrixXd constrained_covariance(const KernelSpec& spec, std::span<const double> xs, double t) {
  const double k11 = spec.eval_unchecked(1, 1, t, t);
  if (!(k11 > 0.0)) throw NumericalError("constrained_covariance: K_11(t,t) is not positive");
  const Eigen::VectorXd col = deriv_col(spec, 1, xs, t);
  const Eigen::VectorXd row = deriv_row(spec, 1, t, xs);
  Eigen::MatrixXd cov = gram(spec, xs);
  cov.noalias() -= col * row.transpose() / k11;
  return 0.5 * (cov + cov.transpose());
}

/// Log marginal likelihood of t computed the slow way: the log-density of
/// N(0, Sigma_t) at y with
///   Sigma_t = sigma2 (n lambda)^{-1} {K(X,X) - K_01(X,t) K_11(t,t)^{-1} K_10(t,X)} + sigma2 I,
/// factorized from scratch for every t. O(n^3) per call; reference only.
inline double naive_log_lik_t(const Dataset& data, const Hyperparams& hyper, const KernelSpec& spec, double t) {
  hyper.validate();
  const auto xs = data.x();
  const auto n = static_cast<Eigen::Index>(xs.size());
  const double k11 = spec.eval_unchecked(1, 1, t, t);
  if (!(k11 > 0.0)) throw NumericalError("naive_log_lik_t: K_11(t,t) is not positive");
  const Eigen::VectorXd col = deriv_col(spec, 1, xs, t);
  const Eigen::VectorXd row = deriv_row(spec, 1, t, xs);
  const double scale = hyper.sigma2 / (static_cast<double>(n) * hyper.lambda);
  Eigen::MatrixXd sigma = gram(spec, xs);
  sigma.noalias() -= col * row.transpose() / k11;
  sigma *= scale;
  sigma.diagonal().array() += hyper.sigma2;
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    std::ostringstream os;
    os << "naive_log_lik_t: Sigma_t is not positive definite at t = " << t;
    throw NumericalError(os.str());
  }
  const Eigen::VectorXd z = llt.matrixL().solve(data.y_vector());
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi) - 0.5 * log_det - 0.5 * z.squaredNorm();
}

}  // namespace validation

}  // namespace extrema_gp
