// Spacetime geodesic on the 1D three-mode mixture: optimizes the reference curve,
// compares it with the straight segment, and prints a few diffusion edit
// distances between data points.

#include <cstdio>

#include "stgeo/diffed.hpp"
#include "stgeo/models/gmm.hpp"

using namespace stgeo;

int main() {
  const auto schedule = NoiseSchedule::vp();
  const GmmDenoiser model(GaussianMixture::paper_1d());

  OptimizerConfig cfg;
  cfg.nodes = 2;
  cfg.n_gamma = 128;
  cfg.steps = 1000;
  cfg.learning_rate = 0.1;
  const SpacetimePoint a{{-2.3}, 0.35}, b{{2.0}, 0.4};
  const auto r = optimize_geodesic(model, schedule, a, b, cfg);
  const auto curve = sample_curve(schedule, r.curve, cfg);
  std::printf("energy: straight %.4f, initial %.4f, geodesic %.4f\n",
              curve_energy(model, schedule, straight_segment(a, b, cfg.n_gamma)), r.initial_energy, r.final_energy);
  std::printf("%8s %10s %10s %10s\n", "s", "t", "log_snr", "x");
  for (std::size_t k = 0; k < curve.size(); k += 16) {
    const auto& p = curve.points[k];
    std::printf("%8.4f %10.4f %10.4f %10.4f\n", static_cast<double>(k) / (curve.size() - 1), p.t,
                schedule.log_snr(p.t), p.x[0]);
  }

  const auto dcfg = diffed_default_config(schedule);
  for (double x : {-2.5, -2.0, 0.5, 2.5}) {
    std::printf("DiffED(-2.5, %4.1f) = %.4f\n", x, diffed(model, schedule, {-2.5}, {x}, dcfg).distance);
  }
}
