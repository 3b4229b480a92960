#pragma once

// Experiment runs: train + evaluate + optional oracle, with CSV/SVG artifacts.
//
// Run directory layout:
//   config.txt            config echo (parse_config reproduces the run)
//   loss.csv              iter,loss,control_cost,mmd_term,lambda_scaled,wall_ms
//   checkpoint.bin        trained network
//   snapshots_t{0,033,067,1}.csv   t,x0[,x1] states at the grid times nearest 0, 0.33, 0.67, 1
//   summary.csv           key,value
//   histograms.svg | scatter.svg, loss.svg
// Oracle directory: oracle_report.csv, u_star.csv (t,x0,u0; 1D only).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sbmmd/config.hpp"
#include "sbmmd/control_net.hpp"
#include "sbmmd/error.hpp"
#include "sbmmd/io.hpp"
#include "sbmmd/kernel_mmd.hpp"
#include "sbmmd/oracle.hpp"
#include "sbmmd/stats.hpp"
#include "sbmmd/svg.hpp"
#include "sbmmd/trainer.hpp"

namespace sbmmd {

/// The constant c for the bimodal target as printed in the published
/// experiment; twice the closed-form double integral.
inline constexpr double kPublishedC = 0.72954;
inline constexpr std::array<double, 4> kSnapshotTimes{0.0, 0.33, 0.67, 1.0};
inline constexpr std::array<const char*, 4> kSnapshotNames{"snapshots_t0.csv", "snapshots_t033.csv",
                                                           "snapshots_t067.csv", "snapshots_t1.csv"};

/// Ordered key/value list written as summary.csv.
struct Summary {
  std::vector<std::pair<std::string, double>> values;

  void set(const std::string& key, double v) {
    for (auto& kv : values) {
      if (kv.first == key) {
        kv.second = v;
        return;
      }
    }
    values.emplace_back(key, v);
  }
  std::optional<double> get(const std::string& key) const {
    for (const auto& kv : values) {
      if (kv.first == key) return kv.second;
    }
    return std::nullopt;
  }
  double at(const std::string& key) const {
    const auto v = get(key);
    if (!v) throw IoError("summary has no key " + key);
    return *v;
  }

  void write(const std::string& path) const {
    auto out = io::open_out(path);
    out << "key,value\n";
    for (const auto& [k, v] : values) out << k << ',' << io::format_double(v) << '\n';
  }

  static Summary read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    Summary s;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = io::split(line);
      if (cells.size() != 2) throw IoError("summary rows need two cells");
      s.values.emplace_back(cells[0], io::parse_double(cells[1]));
    }
    return s;
  }
};

inline void write_loss_csv(const std::vector<LossReport>& reports, std::ostream& os) {
  os << "iter,loss,control_cost,mmd_term,lambda_scaled,wall_ms\n";
  for (const auto& r : reports) {
    os << r.iteration << ',' << io::format_double(r.loss) << ',' << io::format_double(r.control_cost) << ','
       << io::format_double(r.mmd_term) << ',' << io::format_double(r.lambda_scaled) << ','
       << io::format_double(r.wall_ms) << '\n';
  }
}

inline std::vector<LossReport> read_loss_csv(const std::string& path) {
  const auto t = io::read_csv_file(path);
  const int ci = t.column("iter"), cl = t.column("loss"), cc = t.column("control_cost"),
            cm = t.column("mmd_term"), cs = t.column("lambda_scaled"), cw = t.column("wall_ms");
  std::vector<LossReport> out;
  for (const auto& row : t.rows) {
    out.push_back({static_cast<std::int64_t>(row[ci]), row[cl], row[cc], row[cm], row[cs], row[cw]});
  }
  return out;
}

/// Grid indices nearest to 0, 0.33, 0.67 and 1.
inline std::vector<int> snapshot_steps(const TimeGrid& grid) {
  std::vector<int> out;
  for (double t : kSnapshotTimes) out.push_back(grid.nearest_index(t));
  return out;
}

inline void write_states_csv(const Matrix& X, double t, std::ostream& os) {
  os << 't';
  for (Eigen::Index j = 0; j < X.cols(); ++j) os << ",x" << j;
  os << '\n';
  const std::string ts = io::format_double(t);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    os << ts;
    for (Eigen::Index j = 0; j < X.cols(); ++j) os << ',' << io::format_double(X(i, j));
    os << '\n';
  }
}

inline Matrix read_states_csv(const std::string& path) {
  const auto t = io::read_csv_file(path);
  const auto d = static_cast<Eigen::Index>(t.header.size()) - 1;
  Matrix X(static_cast<Eigen::Index>(t.rows.size()), d);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), j) = t.rows[i][static_cast<std::size_t>(j + 1)];
  }
  return X;
}

// ---------------------------------------------------------------------------
// Oracle

struct OracleRun {
  oracle::BridgeSolution bridge;
  std::vector<double> times;
  std::vector<Matrix> drift;  ///< u* per time (1D only)
};

/// Times 0, 0.05, ..., 1 for the u* table.
inline std::vector<double> oracle_times() {
  std::vector<double> t;
  for (int k = 0; k <= 20; ++k) t.push_back(k / 20.0);
  return t;
}

inline OracleRun run_oracle(const ExperimentConfig& cfg) {
  const SolverConfig sc = cfg.solver();
  const auto* mu0 = std::get_if<GaussianMixture>(&sc.initial);
  const auto* mu1 = std::get_if<GaussianMixture>(&sc.target);
  if (mu0 == nullptr || mu1 == nullptr) throw ConfigError("the oracle needs analytic initial and target laws");
  oracle::BridgeProblem pb{sc.model, *mu0, *mu1};
  pb.points_per_axis = cfg.oracle_points;
  OracleRun run{oracle::solve_bridge(pb), {}, {}};
  if (cfg.dim == 1) {
    run.times = oracle_times();
    const auto hf = oracle::h_function(run.bridge.solution, sc.model, run.times);
    run.drift = oracle::optimal_drift(hf, sc.model);
  }
  return run;
}

inline void write_oracle(const OracleRun& run, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = io::open_out(dir + "/oracle_report.csv");
    oracle::write_report(out, run.bridge.solution, run.bridge.h_star);
  }
  if (!run.drift.empty()) {
    auto out = io::open_out(dir + "/u_star.csv");
    oracle::HFunction hf{run.bridge.solution.grid, run.times, {}};
    oracle::write_drift_table(out, hf, run.drift);
  }
}

/// Root-mean-square of u_theta - u* over the u* table points with
/// t <= t_max and |x| <= x_max.
inline double drift_error(const ControlNet& net, const io::CsvTable& u_star, double t_max = 0.9, double x_max = 4.0) {
  if (u_star.header.size() != 3) throw ConfigError("drift comparison is one-dimensional only");
  require(net.state_dim() == 1, "drift comparison is one-dimensional only");
  const int ct = u_star.column("t"), cx = u_star.column("x0"), cu = u_star.column("u0");
  std::map<double, std::vector<std::pair<double, double>>> by_time;
  for (const auto& row : u_star.rows) {
    if (row[ct] <= t_max + 1e-12 && std::abs(row[cx]) <= x_max + 1e-12) by_time[row[ct]].emplace_back(row[cx], row[cu]);
  }
  require(!by_time.empty(), "u* table has no points in the comparison window");
  double total = 0.0;
  std::int64_t count = 0;
  for (const auto& [t, pts] : by_time) {
    Matrix X(static_cast<Eigen::Index>(pts.size()), 1);
    for (std::size_t i = 0; i < pts.size(); ++i) X(static_cast<Eigen::Index>(i), 0) = pts[i].first;
    const Matrix u = net.forward_batch(t, X);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double e = u(static_cast<Eigen::Index>(i), 0) - pts[i].second;
      total += e * e;
      ++count;
    }
  }
  return std::sqrt(total / static_cast<double>(count));
}

struct Comparison {
  double trained_error = 0.0;
  double initial_error = 0.0;
};

/// Trained and initial-network drift errors of a run directory against an
/// oracle directory.
inline Comparison compare_to_oracle(const std::string& run_dir, const std::string& oracle_dir) {
  const ExperimentConfig cfg = load_config(run_dir + "/config.txt");
  if (cfg.dim != 1) throw ConfigError("compare: drift comparison is one-dimensional only");
  std::ifstream ck(run_dir + "/checkpoint.bin", std::ios::binary);
  if (!ck) throw IoError("cannot open " + run_dir + "/checkpoint.bin");
  const ControlNet trained = ControlNet::load(ck);
  const ControlNet initial = ControlNet::glorot(trained.dims(), cfg.seed);
  const auto table = io::read_csv_file(oracle_dir + "/u_star.csv");
  return {drift_error(trained, table), drift_error(initial, table)};
}

// ---------------------------------------------------------------------------
// Plots

inline void plot_loss(const std::vector<std::pair<std::string, std::vector<LossReport>>>& curves,
                      const std::string& path) {
  static const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
  svg::Panel p;
  p.title = "loss F(theta)";
  double lo = 1e300, hi = -1e300, n = 1;
  std::size_t c = 0;
  for (const auto& [label, reports] : curves) {
    svg::Line l;
    l.label = label;
    l.color = colors[c++ % 6];
    for (const auto& r : reports) {
      l.x.push_back(static_cast<double>(r.iteration));
      l.y.push_back(r.loss);
      lo = std::min(lo, r.loss);
      hi = std::max(hi, r.loss);
      n = std::max(n, static_cast<double>(r.iteration));
    }
    p.lines.push_back(std::move(l));
  }
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  p.x_min = 0;
  p.x_max = n;
  p.y_min = lo;
  p.y_max = hi;
  svg::Figure f(480, 270);
  f.add_panel(std::move(p));
  f.save(path);
}

/// Histograms (1D) or scatter plots (2D) of snapshot states, with the target
/// in orange on the last panel.
inline void plot_snapshots(const std::vector<std::pair<double, Matrix>>& snaps, const Law& target,
                           const std::string& path) {
  svg::Figure f;
  const bool one_d = snaps.front().second.cols() == 1;
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    const auto& [t, X] = snaps[s];
    svg::Panel p;
    char title[32];
    std::snprintf(title, sizeof(title), "t = %.2f", t);
    p.title = title;
    const bool last = s + 1 == snaps.size();
    if (one_d) {
      p.x_min = -4;
      p.x_max = 4;
      const int bins = 80;
      const Vector h = stats::histogram_density(X.col(0), -4, 4, bins);
      p.y_max = std::max(0.8, h.maxCoeff() * 1.05);
      p.bars.push_back({-4.0, 0.1, svg::to_std(h), "#4c72b0"});
      if (last) {
        if (const auto* mu = std::get_if<GaussianMixture>(&target)) {
          svg::Line l;
          for (int i = 0; i <= 400; ++i) {
            const double x = -4 + 8.0 * i / 400;
            l.x.push_back(x);
            l.y.push_back(mu->density(Vector::Constant(1, x)));
          }
          p.lines.push_back(std::move(l));
        }
      }
    } else {
      p.x_min = -2;
      p.x_max = 2;
      p.y_min = -2;
      p.y_max = 2;
      if (last) {
        if (const auto* y = std::get_if<EmpiricalMeasure>(&target)) {
          svg::Points tp;
          tp.color = "#dd8452";
          for (Eigen::Index i = 0; i < y->size(); ++i) {
            tp.x.push_back(y->samples(i, 0));
            tp.y.push_back(y->samples(i, 1));
          }
          p.points.push_back(std::move(tp));
        }
      }
      svg::Points pts;
      const Eigen::Index n = std::min<Eigen::Index>(X.rows(), 2000);
      for (Eigen::Index i = 0; i < n; ++i) {
        pts.x.push_back(X(i, 0));
        pts.y.push_back(X(i, 1));
      }
      p.points.push_back(std::move(pts));
    }
    f.add_panel(std::move(p));
  }
  f.save(path);
}

// ---------------------------------------------------------------------------
// Runs

struct RunOptions {
  bool evaluate = true;
  bool plots = true;
  bool oracle = true;  ///< also requires cfg.oracle
  std::ostream* log = nullptr;
  int log_every = 500;
};

struct RunResult {
  ControlNet net;
  std::vector<LossReport> reports;
  Summary summary;
  std::optional<EvalResult> eval;
};

/// Train, evaluate and write all artifacts into `out_dir`. A divergence
/// writes loss.csv and the last finite checkpoint, then rethrows.
inline RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, const RunOptions& opt = {}) {
  const SolverConfig sc = cfg.solver();
  std::filesystem::create_directories(out_dir);
  {
    auto out = io::open_out(out_dir + "/config.txt");
    out << cfg.echo();
  }
  ReportObserver observer;
  if (opt.log != nullptr && opt.log_every > 0) {
    observer = [&](const LossReport& r, const ControlNet&) {
      if (r.iteration % opt.log_every == 0) {
        *opt.log << "iter " << r.iteration << " loss " << r.loss << " control " << r.control_cost << " mmd "
                 << r.mmd_term << '\n';
      }
    };
  }
  std::optional<TrainResult> trained;
  try {
    trained = train(sc, observer);
  } catch (const TrainingDiverged& e) {
    auto out = io::open_out(out_dir + "/loss.csv");
    write_loss_csv(e.reports, out);
    save_checkpoint(e.last_good, out_dir + "/checkpoint.bin");
    throw;
  }
  const TrainResult& tr = *trained;
  {
    auto out = io::open_out(out_dir + "/loss.csv");
    write_loss_csv(tr.reports, out);
  }
  save_checkpoint(tr.net, out_dir + "/checkpoint.bin");

  RunResult res{tr.net, tr.reports, {}, std::nullopt};
  Summary& s = res.summary;
  s.set("dim", cfg.dim);
  s.set("lambda", sc.lambda);
  s.set("parameters", static_cast<double>(tr.net.parameter_count()));
  s.set("iterations", sc.iterations);
  if (!tr.reports.empty()) {
    const auto& last = tr.reports.back();
    s.set("final_loss", last.loss);
    s.set("final_control_term", last.control_cost);
    s.set("final_mmd_term", last.mmd_term);
    s.set("final_lambda_scaled", last.lambda_scaled);
  }
  if (const auto* mu1 = std::get_if<GaussianMixture>(&sc.target)) {
    const double c = double_integral(sc.kernel, *mu1);
    s.set("c_closed_form", c);
    if (cfg.target == "bimodal" && cfg.kernel_alpha == 1.0) {
      s.set("c_published", kPublishedC);
      s.set("c_published_over_closed_form", kPublishedC / c);
    }
  }

  if (opt.evaluate) {
    const TimeGrid grid = sc.time_grid();
    const auto steps = snapshot_steps(grid);
    EvalResult ev = evaluate(tr.net, sc, cfg.eval_paths, cfg.eval_seed, steps);
    s.set("eval_paths", static_cast<double>(cfg.eval_paths));
    s.set("mmd_sq_unbiased", ev.mmd_sq);
    s.set("control_cost", ev.control_cost);
    s.set("j_estimate", ev.j_estimate);
    s.set("half_j_estimate", 0.5 * ev.j_estimate);
    std::vector<std::pair<double, Matrix>> snaps;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const double t = grid.time(steps[k]);
      auto out = io::open_out(out_dir + "/" + kSnapshotNames[k]);
      write_states_csv(ev.snapshots.at(steps[k]), t, out);
      snaps.emplace_back(t, ev.snapshots.at(steps[k]));
    }
    if (cfg.dim == 1) {
      if (const auto* mu1 = std::get_if<GaussianMixture>(&sc.target)) {
        s.set("ks_distance", stats::ks_distance(ev.terminal, *mu1));
      }
      const auto [pos, neg] = stats::sign_fractions(ev.terminal);
      s.set("mass_positive", pos);
      s.set("mass_negative", neg);
    } else if (const auto* y = std::get_if<EmpiricalMeasure>(&sc.target)) {
      s.set("fraction_within_0.15", stats::fraction_within(ev.terminal, y->samples, 0.15));
    }
    if (opt.plots) plot_snapshots(snaps, sc.target, out_dir + (cfg.dim == 1 ? "/histograms.svg" : "/scatter.svg"));
    res.eval = std::move(ev);
  }
  if (opt.plots) plot_loss({{"1/lambda = " + io::format_double(cfg.lambda_inv), tr.reports}}, out_dir + "/loss.svg");

  if (opt.oracle && cfg.oracle) {
    const OracleRun orc = run_oracle(cfg);
    write_oracle(orc, out_dir + "/oracle");
    s.set("h_star", orc.bridge.h_star);
    if (res.eval) {
      s.set("half_j_minus_h_star", 0.5 * res.eval->j_estimate - orc.bridge.h_star);
      s.set("half_j_relative_gap", std::abs(0.5 * res.eval->j_estimate - orc.bridge.h_star) / orc.bridge.h_star);
    }
    if (cfg.dim == 1) {
      const auto cmp = compare_to_oracle(out_dir, out_dir + "/oracle");
      s.set("drift_error_trained", cmp.trained_error);
      s.set("drift_error_initial", cmp.initial_error);
    }
  }
  s.write(out_dir + "/summary.csv");
  return res;
}

/// Name of a sweep member's subdirectory.
inline std::string sweep_member_dir(double lambda_inv, std::uint64_t seed) {
  return "lambda_inv_" + io::format_double(lambda_inv) + "_seed_" + std::to_string(seed);
}

struct SweepRow {
  double lambda_inv = 0.0;
  std::uint64_t seed = 0;
  Summary summary;
};

/// Independent runs over 1/lambda values and seeds; `jobs` > 1 trains
/// members concurrently. Writes sweep.csv and loss.svg at the top level.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::vector<double>& lambda_invs,
                                       const std::vector<std::uint64_t>& seeds, const std::string& out_dir,
                                       int jobs = 1, const RunOptions& opt = {}) {
  require(!lambda_invs.empty() && !seeds.empty(), "sweep needs at least one 1/lambda and one seed");
  std::filesystem::create_directories(out_dir);
  std::optional<OracleRun> orc;
  if (opt.oracle && base.oracle) {
    orc = run_oracle(base);
    write_oracle(*orc, out_dir + "/oracle");
  }
  std::vector<ExperimentConfig> members;
  for (std::uint64_t seed : seeds) {
    for (double li : lambda_invs) {
      ExperimentConfig c = base;
      c.lambda_inv = li;
      c.seed = seed;
      members.push_back(c);
    }
  }
  std::vector<SweepRow> rows(members.size());
  std::vector<std::exception_ptr> errors(members.size());
  RunOptions member_opt = opt;
  member_opt.oracle = false;
  member_opt.log = nullptr;
  auto run_one = [&](std::size_t i) {
    try {
      const auto& c = members[i];
      const std::string dir = out_dir + "/" + sweep_member_dir(c.lambda_inv, c.seed);
      RunResult r = run_experiment(c, dir, member_opt);
      if (orc) {
        r.summary.set("h_star", orc->bridge.h_star);
        if (r.eval) {
          r.summary.set("half_j_relative_gap",
                        std::abs(0.5 * r.eval->j_estimate - orc->bridge.h_star) / orc->bridge.h_star);
        }
        if (c.dim == 1) {
          const auto cmp = compare_to_oracle(dir, out_dir + "/oracle");
          r.summary.set("drift_error_trained", cmp.trained_error);
          r.summary.set("drift_error_initial", cmp.initial_error);
        }
        r.summary.write(dir + "/summary.csv");
      }
      rows[i] = SweepRow{c.lambda_inv, c.seed, std::move(r.summary)};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  jobs = std::max(1, jobs);
  for (std::size_t begin = 0; begin < members.size(); begin += static_cast<std::size_t>(jobs)) {
    std::vector<std::thread> pool;
    const std::size_t end = std::min(members.size(), begin + static_cast<std::size_t>(jobs));
    for (std::size_t i = begin; i < end; ++i) {
      if (jobs == 1) {
        run_one(i);
      } else {
        pool.emplace_back(run_one, i);
      }
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<std::string> keys;
  for (const auto& r : rows) {
    for (const auto& kv : r.summary.values) {
      if (std::find(keys.begin(), keys.end(), kv.first) == keys.end()) keys.push_back(kv.first);
    }
  }
  auto out = io::open_out(out_dir + "/sweep.csv");
  out << "lambda_inv,seed";
  for (const auto& k : keys) out << ',' << k;
  out << '\n';
  for (const auto& r : rows) {
    out << io::format_double(r.lambda_inv) << ',' << r.seed;
    for (const auto& k : keys) {
      const auto v = r.summary.get(k);
      out << ',' << io::format_double(v ? *v : std::nan(""));
    }
    out << '\n';
  }
  if (opt.plots) {
    std::vector<std::pair<std::string, std::vector<LossReport>>> curves;
    for (const auto& c : members) {
      if (c.seed != seeds.front()) continue;
      curves.emplace_back("1/lambda = " + io::format_double(c.lambda_inv),
                          read_loss_csv(out_dir + "/" + sweep_member_dir(c.lambda_inv, c.seed) + "/loss.csv"));
    }
    plot_loss(curves, out_dir + "/loss.svg");
  }
  return rows;
}

}  // namespace sbmmd
