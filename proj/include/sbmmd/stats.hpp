#pragma once

// Sample diagnostics used by the experiment reports.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "sbmmd/error.hpp"
#include "sbmmd/kernel_mmd.hpp"

namespace sbmmd::stats {

/// One-sample Kolmogorov-Smirnov statistic sup |F_n - F|.
inline double ks_distance(std::vector<double> xs, const std::function<double(double)>& cdf) {
  require(!xs.empty(), "ks_distance needs at least one sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

inline double ks_distance(const Matrix& samples, const GaussianMixture& mu) {
  require_dim(samples.cols() == 1 && mu.dim() == 1, "ks_distance: one-dimensional samples only");
  std::vector<double> xs(samples.data(), samples.data() + samples.rows());
  return ks_distance(std::move(xs), [&mu](double x) { return mu.cdf(x); });
}

/// Fraction of the rows of X with coordinate j strictly above / below zero.
inline std::pair<double, double> sign_fractions(const Matrix& X, int j = 0) {
  const double n = static_cast<double>(X.rows());
  const double pos = static_cast<double>((X.col(j).array() > 0.0).count());
  const double neg = static_cast<double>((X.col(j).array() < 0.0).count());
  return {pos / n, neg / n};
}

/// Distance from each row of X to its nearest row of Y (brute force).
inline Vector nearest_distances(const Matrix& X, const Matrix& Y) {
  require_dim(X.cols() == Y.cols(), "nearest_distances: dimension mismatch");
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    out(i) = std::sqrt((Y.rowwise() - X.row(i)).rowwise().squaredNorm().minCoeff());
  }
  return out;
}

/// Fraction of rows of X within `radius` of the point cloud Y.
inline double fraction_within(const Matrix& X, const Matrix& Y, double radius) {
  const Vector d = nearest_distances(X, Y);
  return static_cast<double>((d.array() <= radius).count()) / static_cast<double>(d.size());
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Equal-width histogram density on [lo, hi] with `bins` bins.
inline Vector histogram_density(const Vector& x, double lo, double hi, int bins) {
  require(hi > lo && bins >= 1, "histogram needs hi > lo and bins >= 1");
  Vector h = Vector::Zero(bins);
  const double w = (hi - lo) / bins;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto b = static_cast<long>(std::floor((x(i) - lo) / w));
    if (b >= 0 && b < bins) h(b) += 1.0;
  }
  return h / (static_cast<double>(x.size()) * w);
}

}  // namespace sbmmd::stats
