// sbmmd: command-line front end for training, evaluation, the Schrodinger
// system oracle, sweeps, toy datasets, comparisons and plots.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error,
// 3 divergence, 4 oracle failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sbmmd/sbmmd.hpp"

namespace {

using namespace sbmmd;

struct Overrides {
  std::string preset;
  std::string config;
  std::optional<int> steps, iters, batch_x, batch_t;
  std::optional<double> lambda_inv, kernel_alpha;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;

  void add_to(CLI::App* app) {
    app->add_option("--preset", preset, "bimodal1d | trivial1d | circles-to-moons | circles-to-moons-dispersed | custom");
    app->add_option("--config", config, "key = value config file (applied after --preset)");
    app->add_option("--steps", steps, "time steps N");
    app->add_option("--iters", iters, "training iterations");
    app->add_option("--batch-x", batch_x, "spatial batch size M_x");
    app->add_option("--batch-t", batch_t, "time batch size M_t");
    app->add_option("--lambda-inv", lambda_inv, "penalty weight 1/lambda");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--kernel-alpha", kernel_alpha, "Gaussian kernel bandwidth alpha");
    app->add_option("--set", sets, "extra key=value override (repeatable)");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = preset.empty() ? sbmmd::preset("bimodal1d") : sbmmd::preset(preset);
    if (!config.empty()) c = load_config(config, c);
    if (steps) c.steps = *steps;
    if (iters) c.iters = *iters;
    if (batch_x) c.batch_x = *batch_x;
    if (batch_t) c.batch_t = *batch_t;
    if (lambda_inv) c.lambda_inv = *lambda_inv;
    if (seed) c.seed = *seed;
    if (kernel_alpha) c.kernel_alpha = *kernel_alpha;
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.validate();
    return c;
  }
};

void print_summary(const Summary& s) {
  for (const auto& [k, v] : s.values) std::cout << k << " = " << io::format_double(v) << '\n';
}

ExperimentConfig load_run_config(const std::string& run_dir) { return load_config(run_dir + "/config.txt"); }

ControlNet load_run_net(const std::string& run_dir) {
  std::ifstream in(run_dir + "/checkpoint.bin", std::ios::binary);
  if (!in) throw IoError("cannot open " + run_dir + "/checkpoint.bin");
  return ControlNet::load(in);
}

int run(int argc, char** argv) {
  CLI::App app{"MMD-penalised neural Schrodinger bridge solver"};
  app.require_subcommand(1);

  Overrides train_ov;
  std::string train_out = "run";
  bool no_eval = false, no_oracle = false, quiet = false;
  auto* train = app.add_subcommand("train", "train a control network and write a run directory");
  train_ov.add_to(train);
  train->add_option("--out", train_out, "output directory");
  train->add_flag("--no-eval", no_eval, "skip the evaluation rollout");
  train->add_flag("--no-oracle", no_oracle, "skip the oracle comparison");
  train->add_flag("--quiet", quiet, "no progress lines");

  std::string eval_run;
  std::optional<std::int64_t> eval_paths;
  std::optional<std::uint64_t> eval_seed;
  auto* eval = app.add_subcommand("eval", "evaluate a trained run on fresh paths");
  eval->add_option("--run", eval_run, "run directory")->required();
  eval->add_option("--paths", eval_paths, "number of evaluation paths");
  eval->add_option("--eval-seed", eval_seed, "evaluation seed");

  Overrides oracle_ov;
  std::string oracle_out = "oracle";
  auto* orc = app.add_subcommand("oracle", "solve the Schrodinger system on a grid");
  oracle_ov.add_to(orc);
  orc->add_option("--out", oracle_out, "output directory");

  Overrides sweep_ov;
  std::string sweep_out = "sweep";
  std::vector<double> sweep_lambdas{0.5, 0.05, 0.005, 0.0005};
  std::vector<std::uint64_t> sweep_seeds{0};
  int jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "train one run per 1/lambda and seed");
  sweep_ov.add_to(sweep);
  sweep->add_option("--lambda-invs", sweep_lambdas, "1/lambda values");
  sweep->add_option("--seeds", sweep_seeds, "seeds");
  sweep->add_option("--jobs", jobs, "concurrent members");
  sweep->add_option("--out", sweep_out, "output directory");
  sweep->add_flag("--no-eval", no_eval, "skip evaluation rollouts");

  std::string ds_kind = "two_circles", ds_out;
  ToyDatasetSpec ds;
  auto* dataset = app.add_subcommand("dataset", "write a toy dataset as CSV");
  dataset->add_option("--kind", ds_kind, "two_circles | double_crescent");
  dataset->add_option("--count", ds.count, "number of points");
  dataset->add_option("--noise", ds.noise, "Gaussian noise standard deviation");
  dataset->add_option("--seed", ds.seed, "seed");
  dataset->add_option("--out", ds_out, "output CSV (default stdout)");

  std::string cmp_run, cmp_oracle;
  auto* compare = app.add_subcommand("compare", "drift error of a 1D run against an oracle u* table");
  compare->add_option("--run", cmp_run, "run directory")->required();
  compare->add_option("--oracle", cmp_oracle, "oracle directory (default RUN/oracle)");

  std::string plot_run;
  auto* plot = app.add_subcommand("plot", "redraw the SVG figures of a run directory");
  plot->add_option("--run", plot_run, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (train->parsed()) {
    const ExperimentConfig cfg = train_ov.resolve();
    RunOptions opt;
    opt.evaluate = !no_eval;
    opt.oracle = !no_oracle;
    opt.log = quiet ? nullptr : &std::cerr;
    const RunResult r = run_experiment(cfg, train_out, opt);
    print_summary(r.summary);
  } else if (eval->parsed()) {
    ExperimentConfig cfg = load_run_config(eval_run);
    if (eval_paths) cfg.eval_paths = *eval_paths;
    if (eval_seed) cfg.eval_seed = *eval_seed;
    const SolverConfig sc = cfg.solver();
    const ControlNet net = load_run_net(eval_run);
    const EvalResult ev = evaluate(net, sc, cfg.eval_paths, cfg.eval_seed);
    Summary s;
    s.set("eval_paths", static_cast<double>(cfg.eval_paths));
    s.set("eval_seed", static_cast<double>(cfg.eval_seed));
    s.set("mmd_sq_unbiased", ev.mmd_sq);
    s.set("control_cost", ev.control_cost);
    s.set("j_estimate", ev.j_estimate);
    s.set("half_j_estimate", 0.5 * ev.j_estimate);
    if (const auto* mu1 = std::get_if<GaussianMixture>(&sc.target); mu1 != nullptr && cfg.dim == 1) {
      s.set("ks_distance", stats::ks_distance(ev.terminal, *mu1));
    }
    s.write(eval_run + "/eval_summary.csv");
    print_summary(s);
  } else if (orc->parsed()) {
    const ExperimentConfig cfg = oracle_ov.resolve();
    const OracleRun r = run_oracle(cfg);
    write_oracle(r, oracle_out);
    std::cout << "h_star = " << io::format_double(r.bridge.h_star) << '\n';
    if (cfg.dim == 1 && cfg.initial == "point") {
      const double kl = oracle::kl_to_prior_terminal(cfg.model(), Vector::Constant(1, cfg.initial_mean),
                                                     r.bridge.target);
      std::cout << "kl_to_prior_terminal = " << io::format_double(kl) << '\n';
    }
  } else if (sweep->parsed()) {
    const ExperimentConfig cfg = sweep_ov.resolve();
    std::vector<double> lambdas = sweep_lambdas;
    RunOptions opt;
    opt.evaluate = !no_eval;
    const auto rows = run_sweep(cfg, lambdas, sweep_seeds, sweep_out, jobs, opt);
    for (const auto& r : rows) {
      std::cout << "1/lambda = " << io::format_double(r.lambda_inv) << " seed = " << r.seed;
      if (const auto v = r.summary.get("final_loss")) std::cout << " final_loss = " << io::format_double(*v);
      if (const auto v = r.summary.get("half_j_relative_gap")) std::cout << " half_j_gap = " << io::format_double(*v);
      std::cout << '\n';
    }
  } else if (dataset->parsed()) {
    ds.kind = parse_dataset_kind(ds_kind);
    const EmpiricalMeasure m = generate_dataset(ds);
    if (ds_out.empty()) {
      write_states_csv(m.samples, 0.0, std::cout);
    } else {
      auto out = io::open_out(ds_out);
      write_states_csv(m.samples, 0.0, out);
    }
  } else if (compare->parsed()) {
    const std::string oracle_dir = cmp_oracle.empty() ? cmp_run + "/oracle" : cmp_oracle;
    const Comparison c = compare_to_oracle(cmp_run, oracle_dir);
    const ExperimentConfig cfg = load_run_config(cmp_run);
    auto out = io::open_out(cmp_run + "/compare.csv");
    out << "lambda_inv,drift_error_trained,drift_error_initial\n"
        << io::format_double(cfg.lambda_inv) << ',' << io::format_double(c.trained_error) << ','
        << io::format_double(c.initial_error) << '\n';
    std::cout << "drift_error_trained = " << io::format_double(c.trained_error) << '\n'
              << "drift_error_initial = " << io::format_double(c.initial_error) << '\n';
  } else if (plot->parsed()) {
    const ExperimentConfig cfg = load_run_config(plot_run);
    plot_loss({{"1/lambda = " + io::format_double(cfg.lambda_inv), read_loss_csv(plot_run + "/loss.csv")}},
              plot_run + "/loss.svg");
    std::vector<std::pair<double, Matrix>> snaps;
    for (const char* name : kSnapshotNames) {
      const std::string path = plot_run + "/" + name;
      if (!std::filesystem::exists(path)) continue;
      const auto table = io::read_csv_file(path);
      const double t = table.rows.empty() ? 0.0 : table.rows.front()[0];
      snaps.emplace_back(t, read_states_csv(path));
    }
    if (!snaps.empty()) {
      plot_snapshots(snaps, cfg.solver().target, plot_run + (cfg.dim == 1 ? "/histograms.svg" : "/scatter.svg"));
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const sbmmd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const sbmmd::DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const sbmmd::TrainingDiverged& e) {
    std::cerr << "diverged: " << e.what() << " (" << e.reports.size()
              << " finite iterations recorded; last finite checkpoint written)\n";
    return 3;
  } catch (const sbmmd::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const sbmmd::OracleError& e) {
    std::cerr << "oracle failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
