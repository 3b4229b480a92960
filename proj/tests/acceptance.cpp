// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
//
//   acceptance --workdir DIR [--only 1,2,9]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "sbmmd/sbmmd.hpp"
#include "support/gradient_check.hpp"

using namespace sbmmd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    pass = pass && ok;
  }
};

void log_line(const std::string& s) {
  std::cout << s << std::endl;
}

// Bimodal density written out by hand, and the standard normal, for an
// independent KL quadrature.
double bimodal_density(double x) {
  return (std::exp(-(x + 1) * (x + 1)) + std::exp(-(x - 1) * (x - 1))) / (2.0 * std::sqrt(std::numbers::pi));
}

double kl_bimodal_vs_standard_normal() {
  const double lo = -14.0, hi = 14.0;
  const int n = 280000;
  const double h = (hi - lo) / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double p = bimodal_density(x);
    if (p <= 0.0) continue;
    const double log_q = -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi);
    sum += (i == 0 || i == n ? 0.5 : 1.0) * p * (std::log(p) - log_q);
  }
  return sum * h;
}

// Closed form of the Gaussian-kernel double integral for a 1D mixture.
double gaussian_double_integral_1d(double alpha, const GaussianMixture& mu) {
  double s = 0.0;
  for (int i = 0; i < mu.components(); ++i) {
    for (int j = 0; j < mu.components(); ++j) {
      const double v = 1.0 + 2.0 * alpha * (mu.variances()(i, 0) + mu.variances()(j, 0));
      const double d = mu.means()(i, 0) - mu.means()(j, 0);
      s += mu.weights()(i) * mu.weights()(j) * std::exp(-alpha * d * d / v) / std::sqrt(v);
    }
  }
  return s;
}

Outcome criterion1() {
  Outcome o;
  const auto start = Clock::now();
  const SolverConfig sc = preset("bimodal1d").solver();
  oracle::BridgeProblem pb{sc.model, std::get<GaussianMixture>(sc.initial), std::get<GaussianMixture>(sc.target)};
  const oracle::BridgeSolution b = oracle::solve_bridge(pb);
  const double secs = seconds_since(start);
  const double kl = kl_bimodal_vs_standard_normal();
  o.check(std::abs(b.h_star - 0.09651) <= 1e-3, "H* = " + fmt(b.h_star) + " vs 0.09651 +- 1e-3");
  o.check(std::abs(b.h_star - kl) <= 1e-3,
          "independent KL quadrature " + fmt(kl) + ", |H* - KL| = " + fmt(std::abs(b.h_star - kl)));
  o.check(secs < 5.0, "oracle runtime " + fmt(secs) + " s < 5 s");
  return o;
}

Outcome criterion2(const std::string& workdir) {
  Outcome o;
  const auto mu = GaussianMixture::bimodal_1d();
  const double c = double_integral(Kernel::gaussian(1.0), mu);
  const double closed = gaussian_double_integral_1d(1.0, mu);
  std::ostringstream digits;
  digits.precision(17);
  digits << "double_integral " << c << " vs closed form " << closed;
  o.check(std::abs(c - closed) <= 1e-9, digits.str());
  double quad = 0.0;
  const double h = 0.01;
  for (double x = -9.0; x <= 9.0; x += h) {
    for (double y = -9.0; y <= 9.0; y += h) quad += bimodal_density(x) * bimodal_density(y) * std::exp(-(x - y) * (x - y));
  }
  quad *= h * h;
  o.check(std::abs(c - quad) <= 1e-9, "double quadrature " + fmt(quad) + ", difference " + fmt(std::abs(c - quad)));
  o.check(true, "the quoted 7-digit value 0.3647696 differs by " + fmt(std::abs(c - 0.3647696)) +
                    "; the closed form rounds to 0.3647691");
  ExperimentConfig cfg = preset("bimodal1d");
  cfg.iters = 1;
  RunOptions opt;
  opt.evaluate = false;
  opt.oracle = false;
  opt.plots = false;
  const std::string dir = workdir + "/c2_summary";
  run_experiment(cfg, dir, opt);
  const Summary s = Summary::read(dir + "/summary.csv");
  o.check(s.get("c_closed_form").has_value() && *s.get("c_closed_form") == c, "summary records c_closed_form");
  o.check(s.get("c_published") == 0.72954 && std::abs(s.at("c_published_over_closed_form") - 2.0) < 1e-4,
          "summary records the published 0.72954, ratio " + fmt(s.at("c_published_over_closed_form")));
  return o;
}

Outcome criterion6() {
  Outcome o;
  double worst = 0.0, worst_gap = 0.0;
  for (std::uint64_t s = 1000; s < 1050; ++s) {
    const auto c = test_support::check_gradient(s, s % 2 == 0 ? 1 : 2);
    worst = std::max(worst, c.max_rel);
    worst_gap = std::max(worst_gap, c.loss_gap);
  }
  o.check(worst < 1e-4, "50 instances, max relative error " + fmt(worst) + " < 1e-4");
  o.check(worst_gap < 1e-12, "taped loss vs plain recomputation " + fmt(worst_gap));
  return o;
}

Outcome criterion7(const std::string& suite) {
  Outcome o;
  const Kernel k = Kernel::gaussian(1.0);
  const auto mu = GaussianMixture::bimodal_1d();
  const Vector zero = Vector::Zero(1);
  o.check(std::abs(mean_embedding(k, mu, zero) - 0.4288819424803534) < 1e-14, "bimodal embedding at 0");
  o.check(std::abs(k1_eval(k, mu, zero, zero) - 0.14223611503929323) < 1e-14, "K1(0, 0)");
  o.check(std::abs(mmd_sq_analytic_target(k, EmpiricalMeasure(Matrix::Zero(1, 1)), mu) - 0.507005188958471) < 1e-14,
          "analytic-target MMD^2 of {0}");

  // Unbiasedness: mean of the U-statistic over independent resamples.
  const auto nu = GaussianMixture::normal(Vector::Constant(1, 0.3), Vector::Constant(1, 1.0));
  const double pop = mmd_sq_population(k, mu, nu);
  const int reps = 2000, n = 40;
  double sum = 0.0, sq = 0.0;
  for (int r = 0; r < reps; ++r) {
    const EmpiricalMeasure X(mu.sample(n, 77, 2 * r)), Y(nu.sample(n, 77, 2 * r + 1));
    const double v = mmd_sq_unbiased(k, X, Y);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / reps, se = std::sqrt((sq / reps - mean * mean) / reps);
  o.check(std::abs(mean - pop) <= 3.0 * se,
          "unbiased estimator mean " + fmt(mean) + " vs population " + fmt(pop) + " (3 SE = " + fmt(3 * se) + ")");

  double min_eig = 0.0;
  for (const Kernel& g : {Kernel::gaussian(1.0, 2), Kernel::matern(0.5, 1.0, 2), Kernel::matern(1.5, 1.0, 2),
                          Kernel::matern(2.5, 1.0, 2)}) {
    const Matrix X = GaussianMixture::normal(Vector::Zero(2), Vector::Constant(2, 1.0)).sample(150, 5, 0);
    const Eigen::SelfAdjointEigenSolver<Matrix> es(gram_matrix(g, X));
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
  }
  o.check(min_eig > -1e-10, "Gram matrices PSD, min eigenvalue " + fmt(min_eig));

  if (!suite.empty()) {
    const int rc = std::system((suite + " --gtest_brief=1 > /dev/null 2>&1").c_str());
    o.check(rc == 0, "kernel_mmd unit suite (" + suite + ")");
  }
  return o;
}

Outcome criterion8() {
  using namespace oracle;
  Outcome o;
  const auto normal1 = [](double m, double v) {
    return GaussianMixture::normal(Vector::Constant(1, m), Vector::Constant(1, v));
  };

  // Trivial bridge: mu1 is the grid push-forward of mu0.
  {
    const Grid g(1, 10.0, 1001);
    const auto k = TransitionKernel::gaussian(SdeModel::brownian(1, 1.0), g);
    const GridMeasure mu0 = GridMeasure::from_mixture(g, normal1(0.0, 0.25)).normalized();
    const double lv = std::log(g.cell_volume());
    const Vector log_phi0 = mu0.density.array().log() - k.row_mass().array().log();
    const GridMeasure mu1{g, k.log_apply((log_phi0.array() + lv).matrix(), true).array().exp()};
    const SchrodingerSolution sol = ipf_solve(k, mu0, mu1);
    o.check(sol.sweeps <= 2, "trivial bridge converged in " + std::to_string(sol.sweeps) + " sweeps");
  }

  // Marginal residuals on the point-mass-free bimodal problem.
  {
    const Grid g(1, 9.0, 901);
    const auto k = TransitionKernel::gaussian(SdeModel::brownian(1, 1.0), g);
    const GridMeasure mu0 = GridMeasure::from_mixture(g, normal1(-0.5, 0.3)).normalized();
    const GridMeasure mu1 = GridMeasure::from_mixture(g, GaussianMixture::bimodal_1d()).normalized();
    const SchrodingerSolution sol = ipf_solve(k, mu0, mu1, {1e-10, 10000});
    o.check(sol.residual0 < 1e-8 && sol.residual1 < 1e-8,
            "marginal TV residuals " + fmt(sol.residual0) + ", " + fmt(sol.residual1));
  }

  // Shifted Gaussian bridge: u*(t, x) = a exactly.
  const double a = 0.7, eps = 0.5;
  BridgeProblem pb{SdeModel::brownian(1, 1.0), normal1(0.0, eps * eps), normal1(a, eps * eps + 1.0)};
  pb.points_per_axis = 801;
  const BridgeSolution b = solve_bridge(pb);
  double gauge = 0.0;
  for (double kappa : {1e-3, 0.5, 7.0, 1e4}) {
    SchrodingerSolution s = b.solution;
    s.log_phi0.array() -= std::log(kappa);
    s.log_phi1.array() += std::log(kappa);
    gauge = std::max(gauge, std::abs(entropy_value(s, pb.model, &b.initial, b.target) - b.h_star));
  }
  o.check(gauge <= 1e-12, "gauge invariance of H*, max change " + fmt(gauge));

  const std::vector<double> times{0.0, 0.25, 0.5, 0.75, 0.95};
  const HFunction hf = h_function(b.solution, pb.model, times);
  const auto drift = optimal_drift(hf, pb.model);
  double worst = 0.0;
  for (std::size_t t = 0; t < drift.size(); ++t) {
    const double sd = std::sqrt(eps * eps + times[t]);
    for (Eigen::Index i = 0; i < drift[t].rows(); ++i) {
      const double x = hf.grid.axis(static_cast<int>(i));
      if (std::abs(x - a * times[t]) > 2.0 * sd) continue;
      worst = std::max(worst, std::abs(drift[t](i, 0) - a));
    }
  }
  o.check(worst < 1e-3, "Gaussian-to-Gaussian u* vs closed form, max error within 2 sd " + fmt(worst));
  return o;
}

RunOptions logged(int every) {
  RunOptions opt;
  opt.log = &std::cout;
  opt.log_every = every;
  return opt;
}

void check_1d_quality(Outcome& o, const Summary& s, double ks_bound, const std::string& tag) {
  o.check(s.at("mmd_sq_unbiased") < 5e-3, tag + " unbiased MMD^2 " + fmt(s.at("mmd_sq_unbiased")) + " < 5e-3");
  o.check(s.at("ks_distance") < ks_bound, tag + " KS distance " + fmt(s.at("ks_distance")) + " < " + fmt(ks_bound));
  const double pos = s.at("mass_positive"), neg = s.at("mass_negative");
  o.check(pos >= 0.45 && pos <= 0.55 && neg >= 0.45 && neg <= 0.55,
          tag + " mode masses " + fmt(neg) + " (x<0), " + fmt(pos) + " (x>0)");
}

Outcome criterion3(const std::string& workdir) {
  Outcome o;
  {
    const ExperimentConfig cfg = preset("bimodal1d");
    const auto start = Clock::now();
    const RunResult r = run_experiment(cfg, workdir + "/c3_full", logged(500));
    const double mins = seconds_since(start) / 60.0;
    check_1d_quality(o, r.summary, 0.02, "full:");
    o.check(mins < 30.0, "full: runtime " + fmt(mins) + " min < 30 min");
  }
  {
    ExperimentConfig cfg = preset("bimodal1d");
    cfg.steps = 64;
    cfg.batch_x = 64;
    cfg.iters = 2000;
    const auto start = Clock::now();
    const RunResult r = run_experiment(cfg, workdir + "/c3_reduced", logged(500));
    const double mins = seconds_since(start) / 60.0;
    check_1d_quality(o, r.summary, 0.05, "reduced:");
    o.check(mins < 5.0, "reduced: runtime " + fmt(mins) + " min < 5 min");
  }
  return o;
}

Outcome criterion4(const std::string& workdir) {
  Outcome o;
  const std::vector<double> lambda_invs{0.5, 0.05, 0.005, 0.0005};
  RunOptions opt;
  opt.plots = true;
  const auto rows = run_sweep(preset("bimodal1d"), lambda_invs, {0, 1, 2}, workdir + "/c4_sweep", 1, opt);
  std::map<double, std::vector<double>> gaps, half_j;
  double h_star = 0.0;
  for (const auto& r : rows) {
    gaps[r.lambda_inv].push_back(r.summary.at("half_j_relative_gap"));
    half_j[r.lambda_inv].push_back(r.summary.at("half_j_estimate"));
    h_star = r.summary.at("h_star");
  }
  std::vector<double> med;
  for (double li : lambda_invs) {
    med.push_back(stats::median(gaps[li]));
    o.check(true, "1/lambda = " + fmt(li) + ": median 1/2 J = " + fmt(stats::median(half_j[li])) +
                      ", median relative gap " + fmt(med.back()));
  }
  o.check(med.back() <= 0.3, "1/lambda = 5e-4: median |1/2 J - H*| / H* = " + fmt(med.back()) + " <= 0.3 (H* = " +
                                 fmt(h_star) + ")");
  bool monotone = true;
  for (std::size_t i = 1; i < med.size(); ++i) monotone = monotone && med[i] <= med[i - 1];
  o.check(monotone, "median gap non-increasing in lambda");
  return o;
}

Outcome criterion5(const std::string& workdir) {
  Outcome o;
  {
    ExperimentConfig cfg = preset("circles-to-moons");
    cfg.iters = 2000;
    const RunResult r = run_experiment(cfg, workdir + "/c5_reduced", logged(250));
    o.check(r.summary.at("mmd_sq_unbiased") < 2e-2,
            "reduced: unbiased MMD^2 " + fmt(r.summary.at("mmd_sq_unbiased")) + " < 2e-2");
    o.check(true, "reduced: fraction within 0.15 " + fmt(r.summary.at("fraction_within_0.15")));
  }
  {
    const RunResult r = run_experiment(preset("circles-to-moons"), workdir + "/c5_full", logged(500));
    o.check(r.summary.at("mmd_sq_unbiased") < 1e-2,
            "full: unbiased MMD^2 " + fmt(r.summary.at("mmd_sq_unbiased")) + " < 1e-2");
    const double f = r.summary.at("fraction_within_0.15");
    o.check(f >= 0.95, "full: fraction within 0.15 of the target " + fmt(f) + " >= 0.95");
  }
  return o;
}

Outcome criterion9(const std::string& workdir) {
  Outcome o;
  RunOptions opt;
  opt.evaluate = false;
  opt.oracle = false;
  opt.plots = false;
  for (const char* name : {"bimodal1d", "trivial1d", "circles-to-moons", "circles-to-moons-dispersed"}) {
    ExperimentConfig cfg = preset(name);
    cfg.iters = cfg.dim == 1 ? 100 : 20;
    const std::string a = workdir + "/c9_" + name + "_a", b = workdir + "/c9_" + name + "_b";
    run_experiment(cfg, a, opt);
    run_experiment(cfg, b, opt);
    const std::string la = slurp(a + "/loss.csv");
    o.check(!la.empty() && la == slurp(b + "/loss.csv"), std::string(name) + ": rerun loss.csv bit-identical");
  }
  // Full-length pair when criteria 3 and 4 both ran: the sweep member with
  // the preset's 1/lambda and seed repeats the criterion 3 run.
  const std::string full = workdir + "/c3_full/loss.csv";
  const std::string member = workdir + "/c4_sweep/" + sweep_member_dir(0.005, 0) + "/loss.csv";
  if (fs::exists(full) && fs::exists(member)) {
    o.check(slurp(full) == slurp(member), "bimodal1d 5000-iteration rerun loss.csv bit-identical");
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria runner"};
  std::string workdir = "acceptance_runs";
  std::string only;
  std::string suite;
#ifdef SBMMD_KERNEL_SUITE
  suite = SBMMD_KERNEL_SUITE;
#endif
  app.add_option("--workdir", workdir, "directory for run artifacts");
  app.add_option("--only", only, "comma-separated criteria to run");
  app.add_option("--kernel-suite", suite, "kernel_mmd unit test executable");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  std::set<int> selected;
  if (!only.empty()) {
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ',')) selected.insert(std::stoi(item));
  }
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion1},
      {2, [&] { return criterion2(workdir); }},
      {6, criterion6},
      {7, [&] { return criterion7(suite); }},
      {8, criterion8},
      {3, [&] { return criterion3(workdir); }},
      {4, [&] { return criterion4(workdir); }},
      {5, [&] { return criterion5(workdir); }},
      {9, [&] { return criterion9(workdir); }},
  };

  std::map<int, std::pair<bool, double>> results;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.contains(id)) continue;
    log_line("== criterion " + std::to_string(id));
    const auto start = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    for (const auto& n : o.notes) log_line("   " + n);
    results[id] = {o.pass, seconds_since(start)};
  }

  log_line("");
  bool all = true;
  for (const auto& [id, r] : results) {
    std::printf("criterion %d: %s (%.1f s)\n", id, r.first ? "PASS" : "FAIL", r.second);
    all = all && r.first;
  }
  std::fflush(stdout);
  return all ? 0 : 1;
}
