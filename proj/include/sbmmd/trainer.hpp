#pragma once

// MMD-penalised control losses and the training loops.
//
// Analytic target (mixture mu1):
//   F(theta)  = (1/lambda) E|u(tau, X_tau)|^2 + E[K1(X_1, X~_1)]
// Sample target Y:
//   F1(theta) = (1/lambda) E|u(tau, X_tau)|^2
//             + 1/(M(M-1)) sum_{i != j} K(X_1i, X_1j) - 2/(M |Y|) sum_{i,j} K(X_1i, Y_j)

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "sbmmd/adam.hpp"
#include "sbmmd/autodiff.hpp"
#include "sbmmd/control_net.hpp"
#include "sbmmd/error.hpp"
#include "sbmmd/kernel_mmd.hpp"
#include "sbmmd/sde.hpp"

namespace sbmmd {

struct SolverConfig {
  double lambda = 200.0;
  int steps = 256;
  int batch_x = 128;
  int batch_t = 128;
  int iterations = 5000;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  Kernel kernel = Kernel::gaussian(1.0);
  Law initial = GaussianMixture::point_mass(Vector::Zero(1));
  Law target = GaussianMixture::bimodal_1d();
  SdeModel model = SdeModel::brownian(1, 1.0);
  std::vector<int> net_dims{2, 23, 23, 1};
  /// Sample-target loss only: add the constant Y-Y U-statistic so the
  /// reported loss is the full unbiased squared-MMD estimate.
  bool include_target_constant = false;
  /// Non-uniform grid override; empty means uniform with `steps` steps.
  std::vector<double> grid_points;
  int checkpoint_every = 0;
  std::string checkpoint_path;
  bool record_timing = false;

  bool analytic_target() const { return std::holds_alternative<GaussianMixture>(target); }

  TimeGrid time_grid() const {
    if (!grid_points.empty()) return TimeGrid::from_points(grid_points);
    return TimeGrid::uniform(steps);
  }

  void validate() const {
    require(lambda > 0.0 && std::isfinite(lambda), "lambda must be positive");
    require(steps >= 1, "steps must be positive");
    require(batch_x >= 2, "batch_x must be at least 2");
    require(batch_t >= 1, "batch_t must be at least 1");
    require(iterations >= 0, "iterations must be nonnegative");
    require(learning_rate > 0.0, "learning rate must be positive");
    require(kernel.family == KernelFamily::gaussian, "training requires the gaussian kernel");
    require(model.native(), "training requires affine drift and constant diffusion");
    const int d = model.dim();
    require_dim(law_dim(initial) == d && law_dim(target) == d && kernel.dim == d,
                "initial law, target, kernel and model must share the state dimension");
    require(net_dims.size() >= 2 && net_dims.front() == d + 1 && net_dims.back() == model.noise_dim(),
            "network dims must be [1 + d, ..., m]");
    if (!grid_points.empty()) require(static_cast<int>(grid_points.size()) == steps + 1, "grid size must be steps + 1");
    if (!analytic_target()) require(std::get<EmpiricalMeasure>(target).size() >= 2, "target sample set needs >= 2 points");
  }
};

/// One training iteration's losses. loss == control_cost / lambda + mmd_term
/// exactly, as summed on the tape.
struct LossReport {
  std::int64_t iteration = 0;
  double loss = 0.0;
  double control_cost = 0.0;
  double mmd_term = 0.0;
  double lambda_scaled = 0.0;
  double wall_ms = 0.0;
};

/// Stream ids for iteration `k` of a training run.
struct IterationStreams {
  static std::uint64_t noise(std::uint64_t k, int copy) { return make_stream(StreamTag::noise, 2 * k + copy); }
  static std::uint64_t tau(std::uint64_t k) { return make_stream(StreamTag::tau, k); }
  static std::uint64_t initial(int copy) { return make_stream(StreamTag::initial, static_cast<std::uint64_t>(copy)); }
};

/// Grid indices tau_1..tau_Mt, uniform on {0, ..., N}.
inline std::vector<int> sample_tau(int batch_t, int steps, std::uint64_t seed, std::uint64_t iteration) {
  const CounterRng rng(seed, IterationStreams::tau(iteration));
  std::vector<int> tau(batch_t);
  for (int l = 0; l < batch_t; ++l) {
    const double u = rng.uniform(static_cast<std::uint32_t>(l), 0, 0);
    tau[l] = std::min(steps, static_cast<int>(u * (steps + 1)));
  }
  return tau;
}

/// Quadrature weight (relative to a plain average over the N+1 grid points)
/// applied to |u(t_i, .)|^2 in the running cost.
inline double running_cost_weight(const TimeGrid& grid, int i) {
  if (grid.is_uniform()) return 1.0;
  const int n = grid.steps();
  double w = 0.0;
  if (i > 0) w += 0.5 * grid.dt(i - 1);
  if (i < n) w += 0.5 * grid.dt(i);
  return (n + 1) * w;
}

/// Taped loss of one iteration.
struct LossGraph {
  ad::Var loss;
  ad::Var control;
  ad::Var mmd;
  ControlNet::Bound params;
};

/// Inputs held fixed while the loss is differentiated.
struct IterationInputs {
  Matrix x0;       ///< primary batch initial states, M x d
  Matrix x0_copy;  ///< independent copy (analytic loss only), M x d
  std::uint64_t iteration = 0;
};

namespace detail {

/// Taped Euler-Maruyama rollout of a stacked batch whose row blocks use the
/// given noise streams. Returns the control node at every grid index < N.
struct TapedRollout {
  std::vector<ad::Var> states;
  std::vector<ad::Var> controls;
};

inline ad::Var time_input(ad::Tape& tape, double t, ad::Var X) {
  const Eigen::Index rows = tape.value(X).rows();
  return tape.concat_cols(tape.constant(Matrix::Constant(rows, 1, t)), X);
}

inline TapedRollout taped_rollout(ad::Tape& tape, const ControlNet& net, const ControlNet::Bound& params,
                                  const SdeModel& model, const TimeGrid& grid, const Matrix& x0,
                                  std::uint64_t seed, const std::vector<std::uint64_t>& streams) {
  const Eigen::Index rows = x0.rows();
  const Eigen::Index block = rows / static_cast<Eigen::Index>(streams.size());
  std::vector<CounterRng> rngs;
  for (auto s : streams) rngs.emplace_back(seed, s);
  const ad::Var sigma = tape.constant(model.diffusion());
  const bool has_linear = !model.drift_matrix().isZero(0.0);
  const bool has_offset = !model.drift_offset().isZero(0.0);
  const ad::Var drift_matrix = tape.constant(model.drift_matrix());

  TapedRollout r;
  ad::Var X = tape.constant(x0);
  r.states.push_back(X);
  Matrix dW(rows, model.noise_dim());
  Matrix part(block, model.noise_dim());
  for (int i = 0; i < grid.steps(); ++i) {
    const double t = grid.time(i);
    const double dt = grid.dt(i);
    const ad::Var u = net.forward(tape, params, time_input(tape, t, X));
    r.controls.push_back(u);
    for (std::size_t b = 0; b < rngs.size(); ++b) {
      brownian_increments(rngs[b], 0, i, dt, part);
      dW.middleRows(static_cast<Eigen::Index>(b) * block, block) = part;
    }
    const ad::Var force = tape.add(tape.scale(u, dt), tape.constant(dW));
    ad::Var incr = tape.matmul_bt(force, sigma);
    if (has_linear) incr = tape.add(incr, tape.scale(tape.matmul_bt(X, drift_matrix), dt));
    if (has_offset) incr = tape.add_row(incr, tape.constant(dt * model.drift_offset().transpose()));
    X = tape.add(X, incr);
    if (!tape.value(X).allFinite()) {
      throw DivergenceError("training rollout produced a non-finite state at step " + std::to_string(i + 1));
    }
    r.states.push_back(X);
  }
  return r;
}

inline std::vector<Eigen::Index> row_range(Eigen::Index begin, Eigen::Index count) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) rows[static_cast<std::size_t>(i)] = begin + i;
  return rows;
}

/// Running-cost node: weighted mean over tau and the first `paths` rows of
/// |u(tau, X_tau)|^2.
inline ad::Var running_cost(ad::Tape& tape, const ControlNet& net, const ControlNet::Bound& params,
                            const TimeGrid& grid, const TapedRollout& r, Eigen::Index paths, Eigen::Index rows,
                            const std::vector<int>& tau) {
  std::map<int, int> counts;
  for (int i : tau) ++counts[i];
  std::optional<ad::Var> total;
  for (const auto& [i, c] : counts) {
    ad::Var u = i < grid.steps() ? r.controls[static_cast<std::size_t>(i)]
                                 : net.forward(tape, params, time_input(tape, grid.time(i), r.states.back()));
    if (paths != rows) u = tape.gather_rows(u, row_range(0, paths));
    const ad::Var term = tape.scale(tape.sum(tape.row_sq_norm(u)), c * running_cost_weight(grid, i));
    total = total ? tape.add(*total, term) : term;
  }
  return tape.scale(*total, 1.0 / (static_cast<double>(tau.size()) * static_cast<double>(paths)));
}

}  // namespace detail

/// Taped F(theta) for an analytic mixture target (independent copy X~).
/// The terminal penalty averages K1 over all M x M pairs (X_1i, X~_1j).
inline LossGraph loss_analytic(ad::Tape& tape, const ControlNet& net, const SolverConfig& cfg,
                               const IterationInputs& in) {
  require(cfg.analytic_target(), "loss_analytic requires an analytic mixture target");
  require_dim(in.x0.rows() == in.x0_copy.rows() && in.x0.cols() == in.x0_copy.cols(),
              "loss_analytic: batches differ in shape");
  const auto target = std::make_shared<const GaussianMixture>(std::get<GaussianMixture>(cfg.target));
  const TimeGrid grid = cfg.time_grid();
  const Eigen::Index m = in.x0.rows();
  Matrix stacked(2 * m, in.x0.cols());
  stacked << in.x0, in.x0_copy;

  LossGraph g;
  g.params = net.bind(tape);
  const auto r = detail::taped_rollout(
      tape, net, g.params, cfg.model, grid, stacked, cfg.seed,
      {IterationStreams::noise(in.iteration, 0), IterationStreams::noise(in.iteration, 1)});
  const auto tau = sample_tau(cfg.batch_t, grid.steps(), cfg.seed, in.iteration);
  g.control = detail::running_cost(tape, net, g.params, grid, r, m, 2 * m, tau);

  const ad::Var x1 = tape.gather_rows(r.states.back(), detail::row_range(0, m));
  const ad::Var x1_copy = tape.gather_rows(r.states.back(), detail::row_range(m, m));
  const double alpha = cfg.kernel.alpha;
  const ad::Var cross = tape.mean(tape.gram_gauss(x1, x1_copy, alpha));
  const ad::Var emb = tape.mean(tape.mixture_embed(x1, target, alpha));
  const ad::Var emb_copy = tape.mean(tape.mixture_embed(x1_copy, target, alpha));
  g.mmd = tape.sub(tape.sub(cross, emb), emb_copy);
  g.loss = tape.add(tape.scale(g.control, 1.0 / cfg.lambda), g.mmd);
  return g;
}

/// 1/(n(n-1)) sum_{i != j} K(Y_i, Y_j): the theta-independent part of the
/// unbiased squared-MMD estimate that the sample-target loss omits.
inline double target_self_term(const Kernel& k, const EmpiricalMeasure& Y) {
  const double n = static_cast<double>(Y.size());
  return detail::pairwise_sum(k, Y.samples, Y.samples, true) / (n * (n - 1.0));
}

/// Taped F1(theta) for a sample target (single batch, no copy needed).
inline LossGraph loss_empirical(ad::Tape& tape, const ControlNet& net, const SolverConfig& cfg,
                                const EmpiricalMeasure& Y, const IterationInputs& in,
                                std::optional<double> target_constant = std::nullopt) {
  require(in.x0.rows() >= 2, "loss_empirical needs batch_x >= 2");
  require_dim(Y.dim() == in.x0.cols(), "loss_empirical: target dimension mismatch");
  const TimeGrid grid = cfg.time_grid();
  const Eigen::Index m = in.x0.rows();

  LossGraph g;
  g.params = net.bind(tape);
  const auto r = detail::taped_rollout(tape, net, g.params, cfg.model, grid, in.x0, cfg.seed,
                                       {IterationStreams::noise(in.iteration, 0)});
  const auto tau = sample_tau(cfg.batch_t, grid.steps(), cfg.seed, in.iteration);
  g.control = detail::running_cost(tape, net, g.params, grid, r, m, m, tau);

  const ad::Var x1 = r.states.back();
  const ad::Var y = tape.constant(Y.samples);
  const double alpha = cfg.kernel.alpha;
  const double md = static_cast<double>(m);
  const ad::Var own = tape.scale(tape.sum_offdiag(tape.gram_gauss(x1, x1, alpha)), 1.0 / (md * (md - 1.0)));
  const ad::Var cross = tape.scale(tape.sum(tape.gram_gauss(x1, y, alpha)), 2.0 / (md * static_cast<double>(Y.size())));
  g.mmd = tape.sub(own, cross);
  if (target_constant) g.mmd = tape.add_scalar(g.mmd, *target_constant);
  g.loss = tape.add(tape.scale(g.control, 1.0 / cfg.lambda), g.mmd);
  return g;
}

/// Constant c with lambda (F + c) = control cost + lambda * gamma^2 estimate.
inline double loss_offset(const SolverConfig& cfg) {
  if (cfg.analytic_target()) return double_integral(cfg.kernel, std::get<GaussianMixture>(cfg.target));
  if (cfg.include_target_constant) return 0.0;
  return target_self_term(cfg.kernel, std::get<EmpiricalMeasure>(cfg.target));
}

/// Divergence during training; carries the last finite network.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, ControlNet last_good, std::vector<LossReport> reports)
      : DivergenceError(what), last_good(std::move(last_good)), reports(std::move(reports)) {}
  ControlNet last_good;
  std::vector<LossReport> reports;
};

struct TrainResult {
  ControlNet net;
  std::vector<LossReport> reports;
};

using ReportObserver = std::function<void(const LossReport&, const ControlNet&)>;

inline void save_checkpoint(const ControlNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  net.save(out);
}

/// Algorithm 1 (analytic target) or 2 (sample target): initial states are
/// drawn once, noise and tau afresh every iteration, one Adam step each.
inline TrainResult train(const SolverConfig& cfg, const ReportObserver& observe = {}) {
  cfg.validate();
  ControlNet net = ControlNet::glorot(cfg.net_dims, cfg.seed);
  AdamState adam(net.parameter_count(), cfg.learning_rate);
  Vector theta = net.parameters();

  IterationInputs in;
  in.x0 = sample_initial(cfg.initial, cfg.batch_x, cfg.seed, IterationStreams::initial(0));
  if (cfg.analytic_target()) in.x0_copy = sample_initial(cfg.initial, cfg.batch_x, cfg.seed, IterationStreams::initial(1));
  std::optional<double> target_constant;
  const EmpiricalMeasure* target_samples = std::get_if<EmpiricalMeasure>(&cfg.target);
  if (target_samples != nullptr && cfg.include_target_constant) {
    target_constant = target_self_term(cfg.kernel, *target_samples);
  }
  const double offset = loss_offset(cfg);

  std::vector<LossReport> reports;
  reports.reserve(static_cast<std::size_t>(cfg.iterations));
  ControlNet last_good = net;
  const auto start = std::chrono::steady_clock::now();
  for (int k = 1; k <= cfg.iterations; ++k) {
    in.iteration = static_cast<std::uint64_t>(k);
    ad::Tape tape;
    LossGraph g;
    Vector grad;
    try {
      g = target_samples != nullptr ? loss_empirical(tape, net, cfg, *target_samples, in, target_constant)
                                    : loss_analytic(tape, net, cfg, in);
      if (!std::isfinite(tape.scalar(g.loss))) throw DivergenceError("loss is not finite");
      tape.backward(g.loss);
      grad = net.gradient(tape, g.params);
      adam_step(adam, theta, grad);
    } catch (const DivergenceError& e) {
      throw TrainingDiverged("iteration " + std::to_string(k) + ": " + e.what(), last_good, reports);
    }
    LossReport rep;
    rep.iteration = k;
    rep.control_cost = tape.scalar(g.control);
    rep.mmd_term = tape.scalar(g.mmd);
    rep.loss = tape.scalar(g.loss);
    rep.lambda_scaled = cfg.lambda * (rep.loss + offset);
    if (cfg.record_timing) {
      rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    reports.push_back(rep);
    net.set_parameters(theta);
    if (cfg.checkpoint_every > 0 && k % cfg.checkpoint_every == 0) {
      last_good = net;
      if (!cfg.checkpoint_path.empty()) save_checkpoint(net, cfg.checkpoint_path);
    }
    if (observe) observe(rep, net);
  }
  return {std::move(net), std::move(reports)};
}

struct EvalResult {
  double mmd_sq = 0.0;        ///< unbiased squared MMD of the terminal sample vs target
  double control_cost = 0.0;  ///< mean over paths of sum_i dt |u(t_i, X_i)|^2
  double j_estimate = 0.0;    ///< control_cost + lambda * mmd_sq
  Matrix terminal;
  std::map<int, Matrix> snapshots;  ///< grid index -> states
};

inline BatchControl as_control(const ControlNet& net) {
  return [&net](double t, const Matrix& X) { return net.forward_batch(t, X); };
}

/// Fresh rollout of `paths` trajectories under the trained control.
inline EvalResult evaluate(const ControlNet& net, const SolverConfig& cfg, std::int64_t paths,
                           std::uint64_t eval_seed, const std::vector<int>& snapshot_steps = {}) {
  require(paths >= 2, "evaluate needs at least two paths");
  const TimeGrid grid = cfg.time_grid();
  const Matrix x0 = sample_initial(cfg.initial, paths, eval_seed, make_stream(StreamTag::eval, 1));
  EvalResult res;
  Vector cost = Vector::Zero(paths);
  res.terminal = rollout(cfg.model, as_control(net), x0, grid, eval_seed, make_stream(StreamTag::eval, 0),
                         [&](int step, double, const Matrix& X, const Matrix* u) {
                           if (u != nullptr) cost += grid.dt(step) * u->rowwise().squaredNorm();
                           if (std::find(snapshot_steps.begin(), snapshot_steps.end(), step) != snapshot_steps.end()) {
                             res.snapshots[step] = X;
                           }
                         });
  res.control_cost = cost.mean();
  const EmpiricalMeasure X(res.terminal);
  if (cfg.analytic_target()) {
    res.mmd_sq = mmd_sq_unbiased_analytic(cfg.kernel, X, std::get<GaussianMixture>(cfg.target));
  } else {
    res.mmd_sq = mmd_sq_unbiased(cfg.kernel, X, std::get<EmpiricalMeasure>(cfg.target));
  }
  res.j_estimate = res.control_cost + cfg.lambda * res.mmd_sq;
  return res;
}

struct SweepMember {
  double lambda = 0.0;
  TrainResult run;
};

/// One full training run per lambda from the same seed; `jobs` > 1 runs
/// members on separate threads (they share nothing).
inline std::vector<SweepMember> lambda_sweep(const SolverConfig& cfg, const std::vector<double>& lambdas,
                                             int jobs = 1) {
  require(!lambdas.empty(), "lambda_sweep needs at least one lambda");
  for (std::size_t i = 1; i < lambdas.size(); ++i) require(lambdas[i] > lambdas[i - 1], "lambdas must increase");
  std::vector<std::optional<SweepMember>> out(lambdas.size());
  std::vector<std::exception_ptr> errors(lambdas.size());
  auto run_one = [&](std::size_t i) {
    try {
      SolverConfig c = cfg;
      c.lambda = lambdas[i];
      c.checkpoint_path.clear();
      out[i] = SweepMember{lambdas[i], train(c)};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  jobs = std::max(1, jobs);
  for (std::size_t begin = 0; begin < lambdas.size(); begin += static_cast<std::size_t>(jobs)) {
    std::vector<std::thread> pool;
    const std::size_t end = std::min(lambdas.size(), begin + static_cast<std::size_t>(jobs));
    for (std::size_t i = begin; i < end; ++i) {
      if (jobs == 1) {
        run_one(i);
      } else {
        pool.emplace_back(run_one, i);
      }
    }
    for (auto& t : pool) t.join();
  }
  std::vector<SweepMember> result;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    result.push_back(std::move(*out[i]));
  }
  return result;
}

}  // namespace sbmmd
