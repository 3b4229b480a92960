#pragma once

// Time grids and Euler-Maruyama simulation of
//   dX = (b(t,X) + sigma(t,X) u(t,X)) dt + sigma(t,X) dW
// with counter-based Brownian increments.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <utility>
#include <variant>
#include <vector>

#include "sbmmd/error.hpp"
#include "sbmmd/io.hpp"
#include "sbmmd/kernel_mmd.hpp"
#include "sbmmd/rng.hpp"

namespace sbmmd {

class TimeGrid {
 public:
  TimeGrid() : TimeGrid(uniform(1)) {}

  static TimeGrid uniform(int steps) {
    require(steps >= 1, "time grid needs at least one step");
    std::vector<double> t(steps + 1);
    for (int i = 0; i <= steps; ++i) t[i] = static_cast<double>(i) / steps;
    return TimeGrid(std::move(t), true);
  }

  /// Explicit grid; must start at 0, end at 1 and be strictly increasing.
  static TimeGrid from_points(std::vector<double> t) {
    require(t.size() >= 2, "time grid needs at least two points");
    require(t.front() == 0.0 && t.back() == 1.0, "time grid must span [0, 1]");
    for (std::size_t i = 1; i < t.size(); ++i) require(t[i] > t[i - 1], "time grid must be strictly increasing");
    return TimeGrid(std::move(t), false);
  }

  int steps() const noexcept { return static_cast<int>(times_.size()) - 1; }
  double time(int i) const { return times_.at(i); }
  double dt(int i) const { return times_.at(i + 1) - times_.at(i); }
  const std::vector<double>& times() const noexcept { return times_; }
  bool is_uniform() const noexcept { return uniform_; }

  /// Index of the grid point closest to t (ties go to the earlier point).
  int nearest_index(double t) const {
    int best = 0;
    for (int i = 1; i <= steps(); ++i) {
      if (std::abs(times_[i] - t) < std::abs(times_[best] - t)) best = i;
    }
    return best;
  }

 private:
  TimeGrid(std::vector<double> t, bool uniform) : times_(std::move(t)), uniform_(uniform) {}
  std::vector<double> times_;
  bool uniform_;
};

/// Drift b and diffusion sigma. Affine drift A x + c with constant sigma is
/// the native form (supported by training and the oracle); arbitrary
/// callables are accepted for plain simulation.
class SdeModel {
 public:
  using DriftFn = std::function<Vector(double, const Vector&)>;
  using DiffusionFn = std::function<Matrix(double, const Vector&)>;

  static SdeModel brownian(int dim, double scale) {
    require(dim >= 1, "state dimension must be positive");
    return affine(Matrix::Zero(dim, dim), Vector::Zero(dim), scale * Matrix::Identity(dim, dim));
  }

  static SdeModel affine(Matrix drift_matrix, Vector drift_offset, Matrix diffusion) {
    require_dim(drift_matrix.rows() == drift_matrix.cols(), "drift matrix must be square");
    require_dim(drift_offset.size() == drift_matrix.rows() && diffusion.rows() == drift_matrix.rows(),
                "affine model: dimension mismatch");
    require(diffusion.cols() >= 1, "noise dimension must be positive");
    SdeModel m;
    m.dim_ = static_cast<int>(drift_matrix.rows());
    m.noise_dim_ = static_cast<int>(diffusion.cols());
    m.drift_matrix_ = std::move(drift_matrix);
    m.drift_offset_ = std::move(drift_offset);
    m.diffusion_ = std::move(diffusion);
    m.drift_is_zero_ = m.drift_matrix_.isZero(0.0);
    return m;
  }

  static SdeModel general(int dim, int noise_dim, DriftFn drift, DiffusionFn diffusion) {
    require(dim >= 1 && noise_dim >= 1, "dimensions must be positive");
    require(static_cast<bool>(drift) && static_cast<bool>(diffusion), "drift and diffusion callables required");
    SdeModel m;
    m.dim_ = dim;
    m.noise_dim_ = noise_dim;
    m.drift_fn_ = std::move(drift);
    m.diffusion_fn_ = std::move(diffusion);
    return m;
  }

  int dim() const noexcept { return dim_; }
  int noise_dim() const noexcept { return noise_dim_; }
  bool native() const noexcept { return !drift_fn_; }
  bool drift_is_zero() const noexcept { return native() && drift_is_zero_ && drift_offset_.isZero(0.0); }
  const Matrix& drift_matrix() const { return drift_matrix_; }
  const Vector& drift_offset() const { return drift_offset_; }
  const Matrix& diffusion() const { return diffusion_; }

  Vector drift(double t, const Vector& x) const {
    if (drift_fn_) return drift_fn_(t, x);
    return drift_matrix_ * x + drift_offset_;
  }

  Matrix diffusion(double t, const Vector& x) const {
    if (diffusion_fn_) return diffusion_fn_(t, x);
    return diffusion_;
  }

  /// One Euler-Maruyama increment for a batch (one state per row):
  ///   (b + sigma u) dt + sigma dW.
  /// `control` may be empty (u = 0).
  Matrix increment(double t, const Matrix& X, const Matrix* control, const Matrix& dW, double dt) const {
    if (native()) {
      Matrix force = dW;
      if (control != nullptr) force.noalias() += dt * (*control);
      Matrix out = force * diffusion_.transpose();
      if (!drift_is_zero_) out.noalias() += dt * (X * drift_matrix_.transpose());
      if (!drift_offset_.isZero(0.0)) out.rowwise() += dt * drift_offset_.transpose();
      return out;
    }
    Matrix out(X.rows(), dim_);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const Vector x = X.row(i).transpose();
      const Matrix s = diffusion_fn_(t, x);
      require_dim(s.rows() == dim_ && s.cols() == noise_dim_, "diffusion callable returned wrong shape");
      Vector noise = dW.row(i).transpose();
      if (control != nullptr) noise += dt * control->row(i).transpose();
      out.row(i) = (dt * drift_fn_(t, x) + s * noise).transpose();
    }
    return out;
  }

  /// Largest |b| and operator norm of sigma over random points of the ball of
  /// the given radius; throws if any value is non-finite.
  std::pair<double, double> sampled_bounds(double radius, int samples, std::uint64_t seed = 0) const {
    const CounterRng rng(seed, make_stream(StreamTag::user, 0xB0));
    double max_b = 0.0;
    double max_s = 0.0;
    for (int i = 0; i < samples; ++i) {
      Vector x(dim_);
      for (int j = 0; j < dim_; ++j) x(j) = rng.normal(static_cast<std::uint32_t>(i), 0, static_cast<std::uint32_t>(j));
      const double u = rng.uniform(static_cast<std::uint32_t>(i), 1, 0);
      x *= radius * std::pow(u, 1.0 / dim_) / std::max(x.norm(), 1e-300);
      const double t = rng.uniform(static_cast<std::uint32_t>(i), 2, 0);
      const Vector b = drift(t, x);
      const Matrix s = diffusion(t, x);
      if (!b.allFinite() || !s.allFinite()) throw ConfigError("model coefficients are not finite on the working ball");
      max_b = std::max(max_b, b.norm());
      max_s = std::max(max_s, s.operatorNorm());
    }
    return {max_b, max_s};
  }

  /// Smallest eigenvalue of sigma sigma^T for the constant-diffusion model.
  double min_diffusion_eigenvalue() const {
    require(native(), "min_diffusion_eigenvalue requires a constant diffusion");
    const Matrix a = diffusion_ * diffusion_.transpose();
    return Eigen::SelfAdjointEigenSolver<Matrix>(a).eigenvalues().minCoeff();
  }

 private:
  SdeModel() = default;
  int dim_ = 1;
  int noise_dim_ = 1;
  Matrix drift_matrix_;
  Vector drift_offset_;
  Matrix diffusion_;
  bool drift_is_zero_ = true;
  DriftFn drift_fn_;
  DiffusionFn diffusion_fn_;
};

/// Control evaluated on a batch: (t, X: M x d) -> U: M x m.
using BatchControl = std::function<Matrix(double, const Matrix&)>;

/// Initial or terminal law: analytic mixture (atoms allowed) or sample set.
using Law = std::variant<GaussianMixture, EmpiricalMeasure>;

inline int law_dim(const Law& law) {
  return std::visit([](const auto& l) { return l.dim(); }, law);
}

/// IID draws from mu0. Point masses give copies of the atom; empirical
/// measures are resampled with replacement.
inline Matrix sample_initial(const Law& law, std::int64_t count, std::uint64_t seed, std::uint64_t stream) {
  require(count >= 1, "sample_initial: count must be positive");
  if (const auto* gm = std::get_if<GaussianMixture>(&law)) return gm->sample(count, seed, stream);
  const auto& em = std::get<EmpiricalMeasure>(law);
  const CounterRng rng(seed, stream);
  Matrix out(count, em.dim());
  const auto n = static_cast<double>(em.size());
  for (std::int64_t i = 0; i < count; ++i) {
    auto idx = static_cast<std::int64_t>(rng.uniform(static_cast<std::uint32_t>(i), 0, 0) * n);
    idx = std::min<std::int64_t>(idx, em.size() - 1);
    out.row(i) = em.samples.row(idx);
  }
  return out;
}

/// Standard-normal block for one time step scaled by sqrt(dt); path i draws
/// from counter (path_offset + i, step, *).
inline void brownian_increments(const CounterRng& rng, std::uint32_t path_offset, int step, double dt,
                                Matrix& dW) {
  const double scale = std::sqrt(dt);
  const auto s = static_cast<std::uint32_t>(step);
  const Eigen::Index m = dW.cols();
  for (Eigen::Index i = 0; i < dW.rows(); ++i) {
    const auto path = path_offset + static_cast<std::uint32_t>(i);
    for (Eigen::Index j = 0; j < m; j += 2) {
      const auto z = rng.normal_pair(path, s, static_cast<std::uint32_t>(j / 2));
      dW(i, j) = scale * z[0];
      if (j + 1 < m) dW(i, j + 1) = scale * z[1];
    }
  }
}

/// Called at every grid index with the state; `control` is the control
/// applied on [t_i, t_{i+1}) and is null at the terminal index.
using StepObserver = std::function<void(int step, double t, const Matrix& X, const Matrix* control)>;

/// Streaming Euler-Maruyama rollout without storing the trajectory.
inline Matrix rollout(const SdeModel& model, const BatchControl& control, Matrix X, const TimeGrid& grid,
                      std::uint64_t seed, std::uint64_t stream, const StepObserver& observe = {}) {
  require_dim(X.cols() == model.dim(), "simulate: initial state dimension differs from model");
  const CounterRng rng(seed, stream);
  Matrix dW(X.rows(), model.noise_dim());
  for (int i = 0; i < grid.steps(); ++i) {
    const double t = grid.time(i);
    const double dt = grid.dt(i);
    std::optional<Matrix> u;
    if (control) {
      u = control(t, X);
      require_dim(u->rows() == X.rows() && u->cols() == model.noise_dim(), "control returned wrong shape");
    }
    if (observe) observe(i, t, X, u ? &*u : nullptr);
    brownian_increments(rng, 0, i, dt, dW);
    X += model.increment(t, X, u ? &*u : nullptr, dW, dt);
    if (!X.allFinite()) throw DivergenceError("simulate: non-finite state at step " + std::to_string(i + 1));
  }
  if (observe) observe(grid.steps(), 1.0, X, nullptr);
  return X;
}

/// Full trajectory array, M x (N+1) x d.
class PathBatch {
 public:
  PathBatch(std::int64_t paths, TimeGrid grid, int dim, std::uint64_t seed, std::uint64_t stream)
      : paths_(paths), dim_(dim), grid_(std::move(grid)), seed_(seed), stream_(stream),
        values_(static_cast<std::size_t>(paths * (grid_.steps() + 1) * dim), 0.0) {}

  std::int64_t paths() const noexcept { return paths_; }
  int steps() const noexcept { return grid_.steps(); }
  int dim() const noexcept { return dim_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  const std::vector<double>& values() const noexcept { return values_; }

  double& operator()(std::int64_t path, int step, int j) { return values_[index(path, step, j)]; }
  double operator()(std::int64_t path, int step, int j) const { return values_[index(path, step, j)]; }

  Matrix at_step(int step) const {
    Matrix out(paths_, dim_);
    for (std::int64_t p = 0; p < paths_; ++p) {
      for (int j = 0; j < dim_; ++j) out(p, j) = (*this)(p, step, j);
    }
    return out;
  }

  Matrix terminal() const { return at_step(steps()); }

  void set_step(int step, const Matrix& X) {
    for (std::int64_t p = 0; p < paths_; ++p) {
      for (int j = 0; j < dim_; ++j) (*this)(p, step, j) = X(p, j);
    }
  }

  bool operator==(const PathBatch& o) const {
    return paths_ == o.paths_ && dim_ == o.dim_ && grid_.times() == o.grid_.times() && seed_ == o.seed_ &&
           stream_ == o.stream_ && values_ == o.values_;
  }

 private:
  std::size_t index(std::int64_t path, int step, int j) const {
    return static_cast<std::size_t>((path * (grid_.steps() + 1) + step) * dim_ + j);
  }

  std::int64_t paths_;
  int dim_;
  TimeGrid grid_;
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::vector<double> values_;
};

/// Euler-Maruyama trajectories of the controlled SDE (u = 0 when `control`
/// is empty). Bit-identical for identical inputs.
inline PathBatch simulate(const SdeModel& model, const BatchControl& control, const Matrix& x0,
                          const TimeGrid& grid, std::uint64_t seed, std::uint64_t stream) {
  PathBatch batch(x0.rows(), grid, model.dim(), seed, stream);
  rollout(model, control, x0, grid, seed, stream,
          [&](int step, double, const Matrix& X, const Matrix*) { batch.set_step(step, X); });
  return batch;
}

/// Stream ids used by paired_simulate for the primary and the independent copy.
struct PairedStreams {
  std::uint64_t initial_a = make_stream(StreamTag::initial, 0);
  std::uint64_t initial_b = make_stream(StreamTag::initial, 1);
  std::uint64_t noise_a = make_stream(StreamTag::noise, 0);
  std::uint64_t noise_b = make_stream(StreamTag::noise, 1);
};

/// Two independent batches (independent initial draws and noise) from one seed.
inline std::pair<PathBatch, PathBatch> paired_simulate(const SdeModel& model, const BatchControl& control,
                                                       const Law& mu0, std::int64_t paths, const TimeGrid& grid,
                                                       std::uint64_t seed, const PairedStreams& s = {}) {
  const Matrix xa = sample_initial(mu0, paths, seed, s.initial_a);
  const Matrix xb = sample_initial(mu0, paths, seed, s.initial_b);
  return {simulate(model, control, xa, grid, seed, s.noise_a), simulate(model, control, xb, grid, seed, s.noise_b)};
}

// ---------------------------------------------------------------------------
// Export

inline void write_csv(const PathBatch& b, std::ostream& os) {
  os << "path,step,t";
  for (int j = 0; j < b.dim(); ++j) os << ",x" << j;
  os << '\n';
  for (std::int64_t p = 0; p < b.paths(); ++p) {
    for (int s = 0; s <= b.steps(); ++s) {
      os << p << ',' << s << ',' << io::format_double(b.grid().time(s));
      for (int j = 0; j < b.dim(); ++j) os << ',' << io::format_double(b(p, s, j));
      os << '\n';
    }
  }
}

inline constexpr std::uint64_t kPathMagic = 0x0031485441504253ull;  // "SBPATH1\0"
inline constexpr std::uint64_t kPathVersion = 1;

/// Header (8 x u64: magic, version, M, N, d, seed, stream, reserved) then
/// M*(N+1)*d float64 values; reserved = 1 marks a non-uniform grid whose
/// N+1 times follow the values.
inline void write_binary(const PathBatch& b, std::ostream& os) {
  const std::uint64_t header[8] = {kPathMagic,
                                   kPathVersion,
                                   static_cast<std::uint64_t>(b.paths()),
                                   static_cast<std::uint64_t>(b.steps()),
                                   static_cast<std::uint64_t>(b.dim()),
                                   b.seed(),
                                   b.stream(),
                                   b.grid().is_uniform() ? 0u : 1u};
  for (auto h : header) io::write_le(os, h);
  for (double v : b.values()) io::write_le(os, v);
  if (!b.grid().is_uniform()) {
    for (double t : b.grid().times()) io::write_le(os, t);
  }
}

inline PathBatch read_binary(std::istream& is) {
  std::uint64_t h[8];
  for (auto& v : h) v = io::read_le<std::uint64_t>(is);
  if (h[0] != kPathMagic) throw IoError("not a path batch file");
  if (h[1] != kPathVersion) throw IoError("unsupported path batch version");
  const auto m = static_cast<std::int64_t>(h[2]);
  const auto n = static_cast<int>(h[3]);
  const auto d = static_cast<int>(h[4]);
  std::vector<double> values(static_cast<std::size_t>(m * (n + 1) * d));
  for (double& v : values) v = io::read_le<double>(is);
  TimeGrid grid = TimeGrid::uniform(n);
  if (h[7] == 1) {
    std::vector<double> t(n + 1);
    for (double& v : t) v = io::read_le<double>(is);
    grid = TimeGrid::from_points(std::move(t));
  }
  PathBatch b(m, grid, d, h[5], h[6]);
  for (std::int64_t p = 0; p < m; ++p) {
    for (int s = 0; s <= n; ++s) {
      for (int j = 0; j < d; ++j) b(p, s, j) = values[static_cast<std::size_t>((p * (n + 1) + s) * d + j)];
    }
  }
  return b;
}

}  // namespace sbmmd
