// Steer Brownian motion from the origin towards a two-bump target and
// compare the result with the grid oracle.

#include <cstdio>

#include "sbmmd/sbmmd.hpp"

int main() {
  using namespace sbmmd;

  SolverConfig cfg;
  cfg.steps = 64;
  cfg.batch_x = 64;
  cfg.batch_t = 64;
  cfg.iterations = 300;
  cfg.seed = 7;

  const TrainResult run = train(cfg, [](const LossReport& r, const ControlNet&) {
    if (r.iteration % 100 == 0) std::printf("iter %4lld  loss %+.5f\n", static_cast<long long>(r.iteration), r.loss);
  });
  const EvalResult ev = evaluate(run.net, cfg, 20000, 1);

  oracle::BridgeProblem pb{cfg.model, GaussianMixture::point_mass(Vector::Zero(1)), GaussianMixture::bimodal_1d()};
  const oracle::BridgeSolution bridge = oracle::solve_bridge(pb);

  std::printf("unbiased MMD^2 vs target  %.3e\n", ev.mmd_sq);
  std::printf("KS distance               %.4f\n", stats::ks_distance(ev.terminal, GaussianMixture::bimodal_1d()));
  std::printf("half J estimate           %.5f\n", 0.5 * ev.j_estimate);
  std::printf("oracle H*                 %.5f\n", bridge.h_star);
  return 0;
}
