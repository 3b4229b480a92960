#pragma once

// Grid solver for the Schrodinger system
//   phi0(x) * int p(0,x,1,y) phi1(y) dy = rho0(x)
//   phi1(y) * int p(0,x,1,y) phi0(x) dx = rho1(y)
// by log-domain iterative proportional fitting, plus the h-function
// h(t,x) = int p(t,x,1,y) phi1(y) dy, the optimal drift sigma^T grad log h
// and the entropy value int log h(1,.) d mu1 - int log h(0,.) d mu0.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sbmmd/error.hpp"
#include "sbmmd/io.hpp"
#include "sbmmd/kernel_mmd.hpp"
#include "sbmmd/sde.hpp"

namespace sbmmd::oracle {

/// Uniform tensor grid on [-L, L]^d (d = 1 or 2), row-major over axes with
/// the last axis fastest.
class Grid {
 public:
  Grid(int dim, double half_width, int points_per_axis) : dim_(dim), half_width_(half_width), n_(points_per_axis) {
    require(dim == 1 || dim == 2, "oracle grids support d = 1 or 2");
    require(half_width > 0.0, "grid half width must be positive");
    require(points_per_axis >= 3, "grid needs at least 3 points per axis");
    h_ = 2.0 * half_width / (points_per_axis - 1);
  }

  int dim() const noexcept { return dim_; }
  int points_per_axis() const noexcept { return n_; }
  double half_width() const noexcept { return half_width_; }
  double spacing() const noexcept { return h_; }
  double cell_volume() const noexcept { return std::pow(h_, dim_); }
  Eigen::Index size() const noexcept { return dim_ == 1 ? n_ : Eigen::Index{n_} * n_; }
  double axis(int i) const noexcept { return -half_width_ + i * h_; }

  Vector point(Eigen::Index k) const {
    Vector x(dim_);
    if (dim_ == 1) {
      x(0) = axis(static_cast<int>(k));
    } else {
      x(0) = axis(static_cast<int>(k / n_));
      x(1) = axis(static_cast<int>(k % n_));
    }
    return x;
  }

  Vector axis_points() const {
    Vector a(n_);
    for (int i = 0; i < n_; ++i) a(i) = axis(i);
    return a;
  }

 private:
  int dim_;
  double half_width_;
  int n_;
  double h_;
};

/// Density values on a grid.
struct GridMeasure {
  Grid grid;
  Vector density;

  double mass() const { return density.sum() * grid.cell_volume(); }

  /// Rescale to unit mass.
  GridMeasure normalized() const {
    const double m = mass();
    if (!(m > 0.0) || !std::isfinite(m)) throw OracleError("grid measure has no mass");
    return GridMeasure{grid, density / m};
  }

  static GridMeasure from_mixture(const Grid& g, const GaussianMixture& mu) {
    require_dim(mu.dim() == g.dim(), "grid and mixture dimensions differ");
    if (mu.degenerate()) throw OracleError("grid measures need a density; zero-variance components violate (A2)");
    Vector d(g.size());
    for (Eigen::Index k = 0; k < g.size(); ++k) d(k) = mu.density(g.point(k));
    return GridMeasure{g, d};
  }
};

/// Total-variation distance between two grid densities on the same grid.
inline double total_variation(const GridMeasure& a, const Vector& b) {
  return 0.5 * (a.density - b).cwiseAbs().sum() * a.grid.cell_volume();
}

/// Gaussian transition law X_s | X_t = x ~ N(Phi x + shift, Sigma) of an
/// affine SDE with constant diffusion.
struct GaussianTransition {
  Matrix map;    ///< Phi
  Vector shift;  ///< int_t^s e^{A(s-r)} c dr
  Matrix cov;    ///< Sigma
  Matrix chol_inv;  ///< L^{-1} with Sigma = L L^T
  double log_norm = 0.0;

  /// Integrates dPhi = A Phi, dm = A m + c, dSigma = A Sigma + Sigma A^T + sigma sigma^T
  /// over [t, s] with classical RK4.
  static GaussianTransition of(const SdeModel& model, double t, double s, int substeps = 2000) {
    require(model.native(), "closed-form transitions need affine drift and constant diffusion");
    const int d = model.dim();
    const Matrix& A = model.drift_matrix();
    const Vector& c = model.drift_offset();
    const Matrix q = model.diffusion() * model.diffusion().transpose();
    GaussianTransition g{Matrix::Identity(d, d), Vector::Zero(d), Matrix::Zero(d, d), Matrix(), 0.0};
    if (s <= t) return g;
    if (A.isZero(0.0)) {
      g.shift = (s - t) * c;
      g.cov = (s - t) * q;
      g.factor();
      return g;
    }
    const double h = (s - t) / substeps;
    auto f_cov = [&](const Matrix& S) -> Matrix { return A * S + S * A.transpose() + q; };
    for (int k = 0; k < substeps; ++k) {
      const Matrix p1 = A * g.map, p2 = A * (g.map + 0.5 * h * p1), p3 = A * (g.map + 0.5 * h * p2),
                   p4 = A * (g.map + h * p3);
      g.map += h / 6.0 * (p1 + 2.0 * p2 + 2.0 * p3 + p4);
      const Vector m1 = A * g.shift + c, m2 = A * (g.shift + 0.5 * h * m1) + c, m3 = A * (g.shift + 0.5 * h * m2) + c,
                   m4 = A * (g.shift + h * m3) + c;
      g.shift += h / 6.0 * (m1 + 2.0 * m2 + 2.0 * m3 + m4);
      const Matrix s1 = f_cov(g.cov), s2 = f_cov(g.cov + 0.5 * h * s1), s3 = f_cov(g.cov + 0.5 * h * s2),
                   s4 = f_cov(g.cov + h * s3);
      g.cov += h / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
    }
    g.factor();
    return g;
  }

  bool separable() const {
    const Matrix off_map = map - Matrix(map.diagonal().asDiagonal());
    const Matrix off_cov = cov - Matrix(cov.diagonal().asDiagonal());
    return off_map.isZero(0.0) && off_cov.isZero(0.0);
  }

  double log_density(const Vector& x, const Vector& y) const {
    if (chol_inv.size() == 0) throw OracleError("transition covariance is not positive definite");
    return -0.5 * (chol_inv * (y - map * x - shift)).squaredNorm() + log_norm;
  }

 private:
  void factor() {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success || !(cov.diagonal().array() > 0.0).all()) return;
    const Matrix L = llt.matrixL();
    chol_inv = L.triangularView<Eigen::Lower>().solve(Matrix::Identity(cov.rows(), cov.cols()));
    log_norm = -L.diagonal().array().log().sum() - 0.5 * static_cast<double>(cov.rows()) * std::log(2.0 * std::numbers::pi);
  }
};

/// log p(t, x_i, s, y_j) on a grid. Separable Gaussian kernels are stored
/// per axis; anything else is stored densely (grid size permitting).
class TransitionKernel {
 public:
  /// Closed-form Gaussian kernel of an affine model.
  static TransitionKernel gaussian(const SdeModel& model, const Grid& grid, double t = 0.0, double s = 1.0) {
    require_dim(model.dim() == grid.dim(), "model and grid dimensions differ");
    TransitionKernel k(grid);
    const auto tr = GaussianTransition::of(model, t, s);
    if (tr.separable()) {
      const Vector pts = grid.axis_points();
      for (int a = 0; a < grid.dim(); ++a) {
        const double v = tr.cov(a, a);
        if (!(v > 0.0)) throw OracleError("transition variance must be positive (sigma sigma^T degenerate)");
        Matrix lp(pts.size(), pts.size());
        for (Eigen::Index i = 0; i < pts.size(); ++i) {
          const double mean = tr.map(a, a) * pts(i) + tr.shift(a);
          for (Eigen::Index j = 0; j < pts.size(); ++j) {
            const double z = pts(j) - mean;
            lp(i, j) = -0.5 * z * z / v - 0.5 * std::log(2.0 * std::numbers::pi * v);
          }
        }
        k.axes_.push_back(std::move(lp));
      }
    } else {
      require(grid.size() <= 6000, "non-separable 2D transitions need a grid of at most 6000 points");
      k.dense_ = Matrix(grid.size(), grid.size());
      for (Eigen::Index i = 0; i < grid.size(); ++i) {
        for (Eigen::Index j = 0; j < grid.size(); ++j) (*k.dense_)(i, j) = tr.log_density(grid.point(i), grid.point(j));
      }
    }
    return k;
  }

  /// Monte-Carlo kernel for general 1D models: `paths` Euler-Maruyama paths
  /// from each grid point, binned on the grid. Row accuracy ~ 1/sqrt(paths).
  static TransitionKernel monte_carlo(const SdeModel& model, const Grid& grid, int paths, int steps,
                                      std::uint64_t seed) {
    require(grid.dim() == 1 && model.dim() == 1, "Monte-Carlo transition kernels are 1D only");
    TransitionKernel k(grid);
    const Eigen::Index n = grid.size();
    k.dense_ = Matrix::Constant(n, n, -std::numeric_limits<double>::infinity());
    const TimeGrid tg = TimeGrid::uniform(steps);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Matrix x0 = Matrix::Constant(paths, 1, grid.axis(static_cast<int>(i)));
      const Matrix x1 = rollout(model, {}, x0, tg, seed, make_stream(StreamTag::user, static_cast<std::uint64_t>(i)));
      Vector counts = Vector::Zero(n);
      for (int p = 0; p < paths; ++p) {
        const double pos = (x1(p, 0) + grid.half_width()) / grid.spacing();
        const auto j = static_cast<Eigen::Index>(std::llround(pos));
        if (j >= 0 && j < n) counts(j) += 1.0;
      }
      for (Eigen::Index j = 0; j < n; ++j) {
        if (counts(j) > 0) (*k.dense_)(i, j) = std::log(counts(j) / (paths * grid.spacing()));
      }
    }
    return k;
  }

  const Grid& grid() const noexcept { return grid_; }
  bool is_separable() const noexcept { return !dense_.has_value(); }

  double log_p(Eigen::Index i, Eigen::Index j) const {
    if (dense_) return (*dense_)(i, j);
    if (grid_.dim() == 1) return axes_[0](i, j);
    const Eigen::Index n = grid_.points_per_axis();
    return axes_[0](i / n, j / n) + axes_[1](i % n, j % n);
  }

  /// Dense matrix of densities p(x_i, y_j); for tests and small grids.
  Matrix dense() const {
    Matrix p(grid_.size(), grid_.size());
    for (Eigen::Index i = 0; i < grid_.size(); ++i) {
      for (Eigen::Index j = 0; j < grid_.size(); ++j) p(i, j) = std::exp(log_p(i, j));
    }
    return p;
  }

  /// out_i = log sum_j exp(log p_ij + v_j) (forward) or with p transposed.
  Vector log_apply(const Vector& v, bool transpose) const {
    if (dense_) return lse_matrix(*dense_, v, transpose);
    if (grid_.dim() == 1) return lse_matrix(axes_[0], v, transpose);
    // Two-stage log-sum-exp over the second then the first axis.
    const Eigen::Index n = grid_.points_per_axis();
    Matrix stage(n, n);  // stage(j1, i2)
    for (Eigen::Index j1 = 0; j1 < n; ++j1) {
      const Vector row = v.segment(j1 * n, n);
      stage.row(j1) = lse_matrix(axes_[1], row, transpose).transpose();
    }
    Vector out(grid_.size());
    for (Eigen::Index i2 = 0; i2 < n; ++i2) {
      const Vector col = stage.col(i2);
      const Vector r = lse_matrix(axes_[0], col, transpose);
      for (Eigen::Index i1 = 0; i1 < n; ++i1) out(i1 * n + i2) = r(i1);
    }
    return out;
  }

  /// Probability mass of each row on the grid: sum_j p_ij * cell volume.
  Vector row_mass() const {
    const Vector zero = Vector::Constant(grid_.size(), std::log(grid_.cell_volume()));
    return log_apply(zero, false).array().exp();
  }

 private:
  explicit TransitionKernel(Grid g) : grid_(std::move(g)) {}

  static Vector lse_matrix(const Matrix& lp, const Vector& v, bool transpose) {
    const Eigen::Index n = transpose ? lp.cols() : lp.rows();
    Vector out(n);
    Eigen::ArrayXd terms(transpose ? lp.rows() : lp.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      if (transpose) {
        terms = lp.col(i).array() + v.array();
      } else {
        terms = lp.row(i).transpose().array() + v.array();
      }
      const double mx = terms.maxCoeff();
      if (!std::isfinite(mx)) {
        out(i) = -std::numeric_limits<double>::infinity();
        continue;
      }
      out(i) = mx + std::log((terms - mx).exp().sum());
    }
    return out;
  }

  Grid grid_;
  std::vector<Matrix> axes_;
  std::optional<Matrix> dense_;
};

struct IpfOptions {
  double tolerance = 1e-10;  ///< total variation on both marginals
  int max_sweeps = 10000;
};

/// Potentials of the Schrodinger system with gauge int phi0 = 1.
/// A point-mass initial law stores its atom instead of a grid phi0.
struct SchrodingerSolution {
  Grid grid;
  Vector log_phi0;  ///< log density of mu0* (empty for an atom)
  Vector log_phi1;  ///< log density of mu1*
  std::optional<Vector> atom;
  double atom_weight = 1.0;  ///< mass of mu0* at the atom
  double gauge = 1.0;        ///< kappa applied to fix int phi0 = 1
  int sweeps = 0;
  double residual0 = 0.0;
  double residual1 = 0.0;
  std::vector<double> residual0_history;  ///< after each full sweep
  std::vector<double> residual1_history;

  Vector phi0() const { return log_phi0.array().exp(); }
  Vector phi1() const { return log_phi1.array().exp(); }
};

/// Marginals implied by the potentials: (phi0 * P phi1, phi1 * P^T phi0).
inline std::pair<Vector, Vector> implied_marginals(const TransitionKernel& p, const Vector& log_phi0,
                                                  const Vector& log_phi1) {
  const double lv = std::log(p.grid().cell_volume());
  const Vector a = (log_phi0.array() + p.log_apply((log_phi1.array() + lv).matrix(), false).array()).exp();
  const Vector b = (log_phi1.array() + p.log_apply((log_phi0.array() + lv).matrix(), true).array()).exp();
  return {a, b};
}

/// Alternating (Sinkhorn) updates in the log domain:
///   log phi0 <- log rho0 - log P phi1,  log phi1 <- log rho1 - log P^T phi0.
inline SchrodingerSolution ipf_solve(const TransitionKernel& p, const GridMeasure& mu0, const GridMeasure& mu1,
                                     const IpfOptions& opt = {}) {
  const Grid& g = p.grid();
  require_dim(mu0.density.size() == g.size() && mu1.density.size() == g.size(), "ipf_solve: grid sizes differ");
  if ((mu0.density.array() <= 0.0).any() || (mu1.density.array() <= 0.0).any()) {
    throw OracleError("ipf_solve: marginals must be strictly positive on the grid (underflow; shrink L)");
  }
  const double lv = std::log(g.cell_volume());
  const Vector log_rho0 = mu0.density.array().log();
  const Vector log_rho1 = mu1.density.array().log();

  SchrodingerSolution sol{g, Vector::Zero(g.size()), Vector::Zero(g.size())};
  for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    sol.log_phi0 = log_rho0 - p.log_apply((sol.log_phi1.array() + lv).matrix(), false);
    sol.log_phi1 = log_rho1 - p.log_apply((sol.log_phi0.array() + lv).matrix(), true);
    if (!sol.log_phi0.allFinite() || !sol.log_phi1.allFinite()) {
      throw OracleError("ipf_solve: zero denominator (marginal mass unreachable under the kernel)");
    }
    const auto [m0, m1] = implied_marginals(p, sol.log_phi0, sol.log_phi1);
    sol.residual0 = total_variation(mu0, m0);
    sol.residual1 = total_variation(mu1, m1);
    sol.residual0_history.push_back(sol.residual0);
    sol.residual1_history.push_back(sol.residual1);
    sol.sweeps = sweep;
    if (sol.residual0 < opt.tolerance && sol.residual1 < opt.tolerance) {
      const double log_mass0 = std::log((sol.log_phi0.array() + lv).exp().sum());
      sol.log_phi0.array() -= log_mass0;
      sol.log_phi1.array() += log_mass0;
      sol.gauge = std::exp(-log_mass0);
      return sol;
    }
  }
  throw OracleError("ipf_solve: no convergence within " + std::to_string(opt.max_sweeps) +
                    " sweeps (residuals " + std::to_string(sol.residual0) + ", " + std::to_string(sol.residual1) + ")");
}

/// Closed form for mu0 = delta_{x0}: phi1 = rho1 / p(0, x0, 1, .), unit atom.
inline SchrodingerSolution point_mass_solve(const SdeModel& model, const Grid& grid, const Vector& atom,
                                            const GridMeasure& mu1) {
  require_dim(atom.size() == grid.dim(), "atom dimension differs from grid");
  if ((mu1.density.array() <= 0.0).any()) throw OracleError("target density must be positive on the grid");
  const auto tr = GaussianTransition::of(model, 0.0, 1.0);
  SchrodingerSolution sol{grid, Vector(), Vector(grid.size())};
  for (Eigen::Index j = 0; j < grid.size(); ++j) {
    sol.log_phi1(j) = std::log(mu1.density(j)) - tr.log_density(atom, grid.point(j));
  }
  sol.atom = atom;
  return sol;
}

/// h(t, x) = int p(t, x, 1, y) phi1(y) dy on a time grid.
struct HFunction {
  Grid grid;
  std::vector<double> times;
  std::vector<Vector> log_h;  ///< one per time, over grid points

  Vector h(std::size_t k) const { return log_h.at(k).array().exp(); }
};

inline HFunction h_function(const SchrodingerSolution& sol, const SdeModel& model, const std::vector<double>& times) {
  HFunction out{sol.grid, times, {}};
  const double lv = std::log(sol.grid.cell_volume());
  for (double t : times) {
    require(t >= 0.0 && t <= 1.0, "h_function: times must lie in [0, 1]");
    if (t == 1.0) {
      out.log_h.push_back(sol.log_phi1);
      continue;
    }
    const auto k = TransitionKernel::gaussian(model, sol.grid, t, 1.0);
    out.log_h.push_back(k.log_apply((sol.log_phi1.array() + lv).matrix(), false));
  }
  return out;
}

/// log h(0, x) at an arbitrary point by direct quadrature.
inline double log_h0_at(const SchrodingerSolution& sol, const SdeModel& model, const Vector& x) {
  const auto tr = GaussianTransition::of(model, 0.0, 1.0);
  const double lv = std::log(sol.grid.cell_volume());
  Eigen::ArrayXd terms(sol.grid.size());
  for (Eigen::Index j = 0; j < sol.grid.size(); ++j) {
    terms(j) = tr.log_density(x, sol.grid.point(j)) + sol.log_phi1(j) + lv;
  }
  const double mx = terms.maxCoeff();
  return mx + std::log((terms - mx).exp().sum());
}

/// H* = int log h(1, .) d mu1 - int log h(0, .) d mu0, by grid quadrature.
/// `mu0` is ignored when the solution carries an atom.
inline double entropy_value(const SchrodingerSolution& sol, const SdeModel& model, const GridMeasure* mu0,
                            const GridMeasure& mu1) {
  const double vol = sol.grid.cell_volume();
  if (!sol.log_phi1.allFinite()) throw OracleError("entropy_value: non-positive h(1, .)");
  const double term1 = (sol.log_phi1.array() * mu1.density.array()).sum() * vol;
  double term0 = 0.0;
  if (sol.atom) {
    term0 = log_h0_at(sol, model, *sol.atom);
  } else {
    require(mu0 != nullptr, "entropy_value: mu0 required without an atom");
    const double lv = std::log(vol);
    const auto k = TransitionKernel::gaussian(model, sol.grid, 0.0, 1.0);
    const Vector log_h0 = k.log_apply((sol.log_phi1.array() + lv).matrix(), false);
    if (!log_h0.allFinite()) throw OracleError("entropy_value: h(0, .) underflowed");
    term0 = (log_h0.array() * mu0->density.array()).sum() * vol;
  }
  return term1 - term0;
}

/// u*(t, x) = sigma^T grad log h by central differences (one-sided at the
/// grid edges). Returns one (grid size x m) table per time.
inline std::vector<Matrix> optimal_drift(const HFunction& hf, const SdeModel& model) {
  require(model.native(), "optimal_drift requires a constant diffusion");
  const Grid& g = hf.grid;
  const int d = g.dim();
  const Eigen::Index n = g.points_per_axis();
  const Matrix sigma_t = model.diffusion().transpose();
  std::vector<Matrix> out;
  for (const Vector& lh : hf.log_h) {
    if (!lh.allFinite()) throw OracleError("optimal_drift: h vanishes on the grid");
    Matrix grad(g.size(), d);
    for (Eigen::Index k = 0; k < g.size(); ++k) {
      for (int a = 0; a < d; ++a) {
        const Eigen::Index stride = (d == 2 && a == 0) ? n : 1;
        const Eigen::Index idx = (d == 2 && a == 0) ? k / n : (d == 2 ? k % n : k);
        if (idx == 0) {
          grad(k, a) = (lh(k + stride) - lh(k)) / g.spacing();
        } else if (idx == n - 1) {
          grad(k, a) = (lh(k) - lh(k - stride)) / g.spacing();
        } else {
          grad(k, a) = (lh(k + stride) - lh(k - stride)) / (2.0 * g.spacing());
        }
      }
    }
    out.push_back(grad * sigma_t.transpose());
  }
  return out;
}

/// Linear interpolation of a 1D table at x (clamped to the grid).
inline double interpolate_1d(const Grid& g, const Vector& values, double x) {
  const double pos = std::clamp((x + g.half_width()) / g.spacing(), 0.0, static_cast<double>(g.points_per_axis() - 1));
  const auto i = std::min(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(g.points_per_axis() - 2));
  const double w = pos - static_cast<double>(i);
  return (1.0 - w) * values(i) + w * values(i + 1);
}

/// Default half width: 8 standard deviations beyond the farthest mean of the
/// given mixtures and the prior transition.
inline double default_half_width(const SdeModel& model, const std::vector<GaussianMixture>& laws) {
  const auto tr = GaussianTransition::of(model, 0.0, 1.0);
  double L = 8.0 * std::sqrt(tr.cov.diagonal().maxCoeff());
  for (const auto& mu : laws) {
    for (int c = 0; c < mu.components(); ++c) {
      for (int j = 0; j < mu.dim(); ++j) {
        L = std::max(L, std::abs(mu.means()(c, j)) + 8.0 * std::sqrt(mu.variances()(c, j)));
      }
    }
  }
  return L;
}

/// KL(mu1 || prior terminal law from an atom) by direct quadrature; equals
/// H* when mu0 is a point mass.
inline double kl_to_prior_terminal(const SdeModel& model, const Vector& atom, const GridMeasure& mu1) {
  const auto tr = GaussianTransition::of(model, 0.0, 1.0);
  double total = 0.0;
  for (Eigen::Index j = 0; j < mu1.grid.size(); ++j) {
    const double r = mu1.density(j);
    total += r * (std::log(r) - tr.log_density(atom, mu1.grid.point(j)));
  }
  return total * mu1.grid.cell_volume();
}

/// Mass of the prior transition leaving the grid, weighted by a start law:
/// int (1 - int_grid p(x, y) dy) mu(dx).
inline double truncation_loss(const TransitionKernel& p, const GridMeasure& mu) {
  const Vector lost = (1.0 - p.row_mass().array()).max(0.0);
  return (lost.array() * mu.density.array()).sum() * mu.grid.cell_volume();
}

struct BridgeProblem {
  SdeModel model;
  GaussianMixture initial;
  GaussianMixture target;
  int points_per_axis = 2001;
  std::optional<double> half_width;  ///< default_half_width when unset
  IpfOptions ipf;
  double max_truncation = 1e-8;
};

struct BridgeSolution {
  SchrodingerSolution solution;
  GridMeasure initial;  ///< empty density for an atom
  GridMeasure target;
  double h_star = 0.0;
  double truncation = 0.0;
};

/// Discretize, solve the Schrodinger system and evaluate H*.
inline BridgeSolution solve_bridge(const BridgeProblem& pb) {
  const int d = pb.model.dim();
  require_dim(pb.initial.dim() == d && pb.target.dim() == d, "solve_bridge: law dimensions differ from the model");
  const double L = pb.half_width.value_or(default_half_width(pb.model, {pb.initial, pb.target}));
  const Grid grid(d, L, pb.points_per_axis);
  GridMeasure target = GridMeasure::from_mixture(grid, pb.target).normalized();
  if (pb.initial.is_point_mass()) {
    auto sol = point_mass_solve(pb.model, grid, pb.initial.mean(), target);
    const double h = entropy_value(sol, pb.model, nullptr, target);
    return BridgeSolution{std::move(sol), GridMeasure{grid, Vector()}, std::move(target), h, 0.0};
  }
  GridMeasure initial = GridMeasure::from_mixture(grid, pb.initial).normalized();
  const auto kernel = TransitionKernel::gaussian(pb.model, grid);
  const double loss = truncation_loss(kernel, initial);
  if (loss > pb.max_truncation) {
    throw OracleError("transition mass leaving the grid is " + std::to_string(loss) + "; enlarge the half width L");
  }
  auto sol = ipf_solve(kernel, initial, target, pb.ipf);
  const double h = entropy_value(sol, pb.model, &initial, target);
  return BridgeSolution{std::move(sol), std::move(initial), std::move(target), h, loss};
}

/// Oracle report: grid spec, H*, residuals.
inline void write_report(std::ostream& os, const SchrodingerSolution& sol, double h_star) {
  os << "key,value\n";
  os << "dim," << sol.grid.dim() << '\n';
  os << "half_width," << io::format_double(sol.grid.half_width()) << '\n';
  os << "points_per_axis," << sol.grid.points_per_axis() << '\n';
  os << "h_star," << io::format_double(h_star) << '\n';
  os << "half_j_target," << io::format_double(h_star) << '\n';
  os << "sweeps," << sol.sweeps << '\n';
  os << "residual0," << io::format_double(sol.residual0) << '\n';
  os << "residual1," << io::format_double(sol.residual1) << '\n';
  os << "gauge," << io::format_double(sol.gauge) << '\n';
}

/// u* table: columns t, x0..x{d-1}, u0..u{m-1}.
inline void write_drift_table(std::ostream& os, const HFunction& hf, const std::vector<Matrix>& drift) {
  const int d = hf.grid.dim();
  os << 't';
  for (int j = 0; j < d; ++j) os << ",x" << j;
  for (Eigen::Index j = 0; j < drift.front().cols(); ++j) os << ",u" << j;
  os << '\n';
  for (std::size_t k = 0; k < hf.times.size(); ++k) {
    for (Eigen::Index i = 0; i < hf.grid.size(); ++i) {
      os << io::format_double(hf.times[k]);
      const Vector x = hf.grid.point(i);
      for (int j = 0; j < d; ++j) os << ',' << io::format_double(x(j));
      for (Eigen::Index j = 0; j < drift[k].cols(); ++j) os << ',' << io::format_double(drift[k](i, j));
      os << '\n';
    }
  }
}

}  // namespace sbmmd::oracle
