#pragma once

// Characteristic kernels, closed-form mean embeddings against Gaussian
// mixtures, the target-centred kernel K1, and squared-MMD estimators.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "sbmmd/error.hpp"
#include "sbmmd/rng.hpp"

namespace sbmmd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

enum class KernelFamily { gaussian, matern };

/// Translation-invariant kernel K(x,y) = Phi(x - y), normalised so K(x,x) = 1.
///
/// gaussian: exp(-alpha |x-y|^2).
/// matern:   half-integer order nu in {1/2, 3/2, 5/2}, s = sqrt(2 nu) alpha |x-y|.
struct Kernel {
  KernelFamily family = KernelFamily::gaussian;
  double alpha = 1.0;
  double order = 0.0;
  int dim = 1;

  static Kernel gaussian(double alpha, int dim = 1) {
    require(alpha > 0.0, "kernel bandwidth must be positive");
    require(dim >= 1, "kernel dimension must be positive");
    return Kernel{KernelFamily::gaussian, alpha, 0.0, dim};
  }

  static Kernel matern(double order, double alpha, int dim = 1) {
    require(alpha > 0.0, "kernel bandwidth must be positive");
    require(dim >= 1, "kernel dimension must be positive");
    require(order == 0.5 || order == 1.5 || order == 2.5,
            "matern kernel supports orders 1/2, 3/2 and 5/2 only");
    return Kernel{KernelFamily::matern, alpha, order, dim};
  }

  /// Kernel as a function of the squared distance.
  double from_sq_dist(double r2) const noexcept {
    if (family == KernelFamily::gaussian) return std::exp(-alpha * r2);
    const double s = std::sqrt(2.0 * order * r2) * alpha;
    if (order == 0.5) return std::exp(-s);
    if (order == 1.5) return (1.0 + s) * std::exp(-s);
    return (1.0 + s + s * s / 3.0) * std::exp(-s);
  }

  double diagonal() const noexcept { return 1.0; }
};

/// Finite mixture of axis-aligned Gaussians. Zero variance encodes an atom.
class GaussianMixture {
 public:
  GaussianMixture() = default;

  GaussianMixture(Vector weights, Matrix means, Matrix variances)
      : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
    require(weights_.size() >= 1, "mixture needs at least one component");
    require_dim(means_.rows() == weights_.size() && variances_.rows() == weights_.size(),
                "mixture: weights, means and variances disagree on component count");
    require_dim(means_.cols() == variances_.cols() && means_.cols() >= 1,
                "mixture: means and variances disagree on dimension");
    require((weights_.array() >= 0.0).all(), "mixture weights must be nonnegative");
    require(std::abs(weights_.sum() - 1.0) <= 1e-12, "mixture weights must sum to 1");
    require((variances_.array() >= 0.0).all() && variances_.allFinite(),
            "mixture variances must be finite and nonnegative");
  }

  static GaussianMixture point_mass(const Vector& atom) {
    return GaussianMixture(Vector::Ones(1), atom.transpose(), Matrix::Zero(1, atom.size()));
  }

  static GaussianMixture normal(const Vector& mean, const Vector& variance) {
    return GaussianMixture(Vector::Ones(1), mean.transpose(), variance.transpose());
  }

  /// The bimodal density (e^{-(x+1)^2} + e^{-(x-1)^2}) / (2 sqrt(pi)).
  static GaussianMixture bimodal_1d() {
    Matrix means(2, 1);
    means << -1.0, 1.0;
    return GaussianMixture(Vector::Constant(2, 0.5), means, Matrix::Constant(2, 1, 0.5));
  }

  int dim() const noexcept { return static_cast<int>(means_.cols()); }
  int components() const noexcept { return static_cast<int>(weights_.size()); }
  const Vector& weights() const noexcept { return weights_; }
  const Matrix& means() const noexcept { return means_; }
  const Matrix& variances() const noexcept { return variances_; }

  bool degenerate() const noexcept { return (variances_.array() == 0.0).any(); }

  bool is_point_mass() const noexcept {
    return components() == 1 && (variances_.array() == 0.0).all();
  }

  double density(const Vector& x) const {
    require_dim(x.size() == dim(), "mixture density: dimension mismatch");
    require(!degenerate(), "mixture density undefined for zero-variance components");
    double total = 0.0;
    for (int k = 0; k < components(); ++k) {
      double log_p = 0.0;
      for (int j = 0; j < dim(); ++j) {
        const double v = variances_(k, j);
        const double z = x(j) - means_(k, j);
        log_p += -0.5 * z * z / v - 0.5 * std::log(2.0 * std::numbers::pi * v);
      }
      total += weights_(k) * std::exp(log_p);
    }
    return total;
  }

  /// Cumulative distribution function; one-dimensional mixtures only.
  double cdf(double x) const {
    require_dim(dim() == 1, "mixture cdf is defined for d = 1");
    double total = 0.0;
    for (int k = 0; k < components(); ++k) {
      const double v = variances_(k, 0);
      const double m = means_(k, 0);
      const double c = v == 0.0 ? (x >= m ? 1.0 : 0.0)
                                 : 0.5 * std::erfc(-(x - m) / std::sqrt(2.0 * v));
      total += weights_(k) * c;
    }
    return total;
  }

  Vector mean() const { return means_.transpose() * weights_; }

  /// IID draws; draw i uses counter block (i, 0, *) of (seed, stream).
  Matrix sample(std::int64_t count, std::uint64_t seed, std::uint64_t stream) const {
    require(count >= 1, "sample count must be positive");
    const CounterRng rng(seed, stream);
    const int d = dim();
    Matrix out(count, d);
    for (std::int64_t i = 0; i < count; ++i) {
      const auto idx = static_cast<std::uint32_t>(i);
      const double u = rng.uniform(idx, 0xFFFFFFFFu, 0);
      int k = 0;
      double acc = weights_(0);
      while (u >= acc && k + 1 < components()) acc += weights_(++k);
      for (int j = 0; j < d; ++j) {
        out(i, j) = means_(k, j) + std::sqrt(variances_(k, j)) * rng.normal(idx, 0, static_cast<std::uint32_t>(j));
      }
    }
    return out;
  }

 private:
  Vector weights_;
  Matrix means_;
  Matrix variances_;
};

/// Sample set {X_1..X_M} in R^d, stored one point per row.
struct EmpiricalMeasure {
  Matrix samples;

  EmpiricalMeasure() = default;
  explicit EmpiricalMeasure(Matrix s) : samples(std::move(s)) {
    require(samples.rows() >= 1 && samples.cols() >= 1, "empirical measure needs at least one sample");
  }

  std::int64_t size() const noexcept { return samples.rows(); }
  int dim() const noexcept { return static_cast<int>(samples.cols()); }
};

// ---------------------------------------------------------------------------
// Kernel evaluation and embeddings

inline double kernel_eval(const Kernel& k, const Vector& x, const Vector& y) {
  require_dim(x.size() == y.size(), "kernel_eval: dimension mismatch");
  require_dim(x.size() == k.dim, "kernel_eval: point dimension differs from kernel dimension");
  return k.from_sq_dist((x - y).squaredNorm());
}

namespace detail {

inline void require_gaussian(const Kernel& k, const char* op) {
  if (k.family != KernelFamily::gaussian) {
    throw ConfigError(std::string(op) + ": closed form requires the gaussian kernel "
                      "(use mean_embedding_quadrature for matern)");
  }
}

/// E[exp(-alpha |Z - Z'|^2)] for independent axis-aligned Gaussians, given
/// the difference of means and the summed variances.
inline double gaussian_overlap(double alpha, const RowVector& mean_diff, const RowVector& var_sum) {
  double out = 1.0;
  for (Eigen::Index j = 0; j < mean_diff.size(); ++j) {
    const double s = 1.0 + 2.0 * alpha * var_sum(j);
    out *= std::exp(-alpha * mean_diff(j) * mean_diff(j) / s) / std::sqrt(s);
  }
  return out;
}

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Sum over rows i of X and rows j of Y of K(x_i, y_j). When `same` is set,
/// X and Y are the same set and only i != j pairs are summed.
inline double pairwise_sum(const Kernel& k, const Matrix& X, const Matrix& Y, bool same) {
  require_dim(X.cols() == Y.cols(), "pairwise kernel sum: dimension mismatch");
  const Eigen::Index n = Y.rows();
  const Eigen::Index d = X.cols();
  const Matrix yt = Y.transpose();
  CompensatedSum total;
  Eigen::ArrayXd d2(n);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Eigen::Index begin = same ? i + 1 : 0;
    const Eigen::Index len = n - begin;
    if (len <= 0) continue;
    auto r2 = d2.head(len);
    r2.setZero();
    for (Eigen::Index j = 0; j < d; ++j) {
      r2 += (yt.row(j).segment(begin, len).array().transpose() - X(i, j)).square();
    }
    double row_sum;
    if (k.family == KernelFamily::gaussian) {
      row_sum = (-k.alpha * r2).exp().sum();
    } else {
      row_sum = 0.0;
      for (Eigen::Index j = 0; j < len; ++j) row_sum += k.from_sq_dist(r2(j));
    }
    total.add(same ? 2.0 * row_sum : row_sum);
  }
  return total.value();
}

/// Gauss-Hermite nodes and weights for E[f(Z)], Z ~ N(0,1) (Golub-Welsch).
inline std::pair<Vector, Vector> gauss_hermite_normal(int n) {
  Matrix jacobi = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
  Vector nodes = eig.eigenvalues();
  Vector weights = eig.eigenvectors().row(0).transpose().array().square();
  return {nodes, weights};
}

}  // namespace detail

/// x -> integral K(x, y) mu(dy), exact for the gaussian kernel.
inline double mean_embedding(const Kernel& k, const GaussianMixture& mu, const Vector& x) {
  detail::require_gaussian(k, "mean_embedding");
  require_dim(x.size() == mu.dim() && mu.dim() == k.dim, "mean_embedding: dimension mismatch");
  double total = 0.0;
  for (int c = 0; c < mu.components(); ++c) {
    const RowVector diff = x.transpose() - mu.means().row(c);
    total += mu.weights()(c) * detail::gaussian_overlap(k.alpha, diff, mu.variances().row(c));
  }
  return total;
}

/// Embedding by tensor Gauss-Hermite quadrature; works for any kernel family.
/// Accuracy for matern is limited by the kink of the kernel at zero distance.
inline double mean_embedding_quadrature(const Kernel& k, const GaussianMixture& mu, const Vector& x,
                                        int nodes_per_axis = 96) {
  require_dim(x.size() == mu.dim() && mu.dim() == k.dim, "mean_embedding_quadrature: dimension mismatch");
  require(mu.dim() <= 3, "mean_embedding_quadrature supports d <= 3");
  const auto [z, w] = detail::gauss_hermite_normal(nodes_per_axis);
  const int d = mu.dim();
  double total = 0.0;
  for (int c = 0; c < mu.components(); ++c) {
    std::vector<int> idx(d, 0);
    double comp = 0.0;
    const bool atom = (mu.variances().row(c).array() == 0.0).all();
    if (atom) {
      comp = kernel_eval(k, x, mu.means().row(c).transpose());
    } else {
      while (true) {
        double weight = 1.0;
        double r2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double y = mu.means()(c, j) + std::sqrt(mu.variances()(c, j)) * z(idx[j]);
          weight *= w(idx[j]);
          r2 += (x(j) - y) * (x(j) - y);
        }
        comp += weight * k.from_sq_dist(r2);
        int j = 0;
        while (j < d && ++idx[j] == nodes_per_axis) idx[j++] = 0;
        if (j == d) break;
      }
    }
    total += mu.weights()(c) * comp;
  }
  return total;
}

/// integral integral K(x, y) mu(dx) nu(dy).
inline double cross_integral(const Kernel& k, const GaussianMixture& mu, const GaussianMixture& nu) {
  detail::require_gaussian(k, "cross_integral");
  require_dim(mu.dim() == nu.dim() && mu.dim() == k.dim, "cross_integral: dimension mismatch");
  double total = 0.0;
  for (int a = 0; a < mu.components(); ++a) {
    for (int b = 0; b < nu.components(); ++b) {
      const RowVector diff = mu.means().row(a) - nu.means().row(b);
      const RowVector var = mu.variances().row(a) + nu.variances().row(b);
      total += mu.weights()(a) * nu.weights()(b) * detail::gaussian_overlap(k.alpha, diff, var);
    }
  }
  return total;
}

/// integral integral K(x, y) mu(dx) mu(dy).
inline double double_integral(const Kernel& k, const GaussianMixture& mu) {
  return cross_integral(k, mu, mu);
}

/// Population squared MMD between two mixtures.
inline double mmd_sq_population(const Kernel& k, const GaussianMixture& mu, const GaussianMixture& nu) {
  return double_integral(k, mu) - 2.0 * cross_integral(k, mu, nu) + double_integral(k, nu);
}

/// K1(x,y) = K(x,y) - (embedding of mu1)(x) - (embedding of mu1)(y).
inline double k1_eval(const Kernel& k, const GaussianMixture& mu1, const Vector& x, const Vector& y) {
  return kernel_eval(k, x, y) - mean_embedding(k, mu1, x) - mean_embedding(k, mu1, y);
}

// ---------------------------------------------------------------------------
// Estimators

/// V-statistic: full double sums over both sample sets.
inline double mmd_sq_biased(const Kernel& k, const EmpiricalMeasure& X, const EmpiricalMeasure& Y) {
  require(X.size() >= 1 && Y.size() >= 1, "mmd_sq_biased: empty sample set");
  require_dim(X.dim() == Y.dim() && X.dim() == k.dim, "mmd_sq_biased: dimension mismatch");
  const double m = static_cast<double>(X.size());
  const double n = static_cast<double>(Y.size());
  const double xx = detail::pairwise_sum(k, X.samples, X.samples, true) + m * k.diagonal();
  const double yy = detail::pairwise_sum(k, Y.samples, Y.samples, true) + n * k.diagonal();
  const double xy = detail::pairwise_sum(k, X.samples, Y.samples, false);
  return std::max(0.0, xx / (m * m) - 2.0 * xy / (m * n) + yy / (n * n));
}

/// U-statistic: diagonal terms excluded from the within-set sums.
inline double mmd_sq_unbiased(const Kernel& k, const EmpiricalMeasure& X, const EmpiricalMeasure& Y) {
  require(X.size() >= 2 && Y.size() >= 2, "mmd_sq_unbiased needs at least two samples per set");
  require_dim(X.dim() == Y.dim() && X.dim() == k.dim, "mmd_sq_unbiased: dimension mismatch");
  const double m = static_cast<double>(X.size());
  const double n = static_cast<double>(Y.size());
  const double xx = detail::pairwise_sum(k, X.samples, X.samples, true);
  const double yy = detail::pairwise_sum(k, Y.samples, Y.samples, true);
  const double xy = detail::pairwise_sum(k, X.samples, Y.samples, false);
  return xx / (m * (m - 1.0)) - 2.0 * xy / (m * n) + yy / (n * (n - 1.0));
}

/// Squared MMD between an empirical measure and an analytic mixture target,
/// using the full V-statistic on X.
inline double mmd_sq_analytic_target(const Kernel& k, const EmpiricalMeasure& X, const GaussianMixture& mu1) {
  require_dim(X.dim() == mu1.dim() && X.dim() == k.dim, "mmd_sq_analytic_target: dimension mismatch");
  const double m = static_cast<double>(X.size());
  const double xx = detail::pairwise_sum(k, X.samples, X.samples, true) + m * k.diagonal();
  detail::CompensatedSum emb;
  for (std::int64_t i = 0; i < X.size(); ++i) emb.add(mean_embedding(k, mu1, X.samples.row(i).transpose()));
  return std::max(0.0, xx / (m * m) - 2.0 * emb.value() / m + double_integral(k, mu1));
}

/// Unbiased counterpart of mmd_sq_analytic_target (U-statistic on X).
inline double mmd_sq_unbiased_analytic(const Kernel& k, const EmpiricalMeasure& X, const GaussianMixture& mu1) {
  require(X.size() >= 2, "mmd_sq_unbiased_analytic needs at least two samples");
  require_dim(X.dim() == mu1.dim() && X.dim() == k.dim, "mmd_sq_unbiased_analytic: dimension mismatch");
  const double m = static_cast<double>(X.size());
  const double xx = detail::pairwise_sum(k, X.samples, X.samples, true);
  detail::CompensatedSum emb;
  for (std::int64_t i = 0; i < X.size(); ++i) emb.add(mean_embedding(k, mu1, X.samples.row(i).transpose()));
  return xx / (m * (m - 1.0)) - 2.0 * emb.value() / m + double_integral(k, mu1);
}

/// Dense Gram matrix [K(x_i, x_j)].
inline Matrix gram_matrix(const Kernel& k, const Matrix& X) {
  Matrix g(X.rows(), X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      g(i, j) = g(j, i) = k.from_sq_dist((X.row(i) - X.row(j)).squaredNorm());
    }
  }
  return g;
}

}  // namespace sbmmd
