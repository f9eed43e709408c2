// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "oracles/gaussian_oracle.hpp"
#include "stgeo/constraints.hpp"
#include "stgeo/diffed.hpp"
#include "stgeo/models/gmm.hpp"
#include "stgeo/models/mlp.hpp"
#include "stgeo/pfode.hpp"
#include "stgeo/tps.hpp"

using namespace stgeo;

namespace {

const NoiseSchedule kVp = NoiseSchedule::vp();
const oracle::VpSchedule kOracleVp;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

oracle::GaussPosterior posterior_at(const Vec& mean, double s2, const SpacetimePoint& z) {
  return oracle::gaussian_posterior(mean, s2, z.x, std::sqrt(kOracleVp.alpha2(z.t)), kOracleVp.sigma2(z.t));
}

// Smooth random curve: straight segment plus two sine modes in every coordinate.
struct RandomCurve {
  SpacetimePoint a, b;
  Vec amp1, amp2;

  SpacetimePoint at(double u) const {
    SpacetimePoint p{Vec(a.dim()), 0.0};
    for (std::size_t i = 0; i <= a.dim(); ++i) {
      const double lo = i < a.dim() ? a.x[i] : a.t, hi = i < a.dim() ? b.x[i] : b.t;
      const double v = (1 - u) * lo + u * hi + amp1[i] * std::sin(M_PI * u) + amp2[i] * std::sin(2 * M_PI * u);
      (i < a.dim() ? p.x[i] : p.t) = v;
    }
    return p;
  }

  DiscretizedCurve discretize(std::size_t n) const {
    DiscretizedCurve c;
    for (std::size_t k = 0; k < n; ++k) c.points.push_back(at(static_cast<double>(k) / static_cast<double>(n - 1)));
    return c;
  }
};

RandomCurve random_curve(std::mt19937_64& rng, std::size_t dim) {
  std::uniform_real_distribution<double> ux(-2, 2), ut(0.3, 0.7), ua(-0.5, 0.5), uta(-0.1, 0.1);
  RandomCurve c;
  c.a = {Vec(dim), ut(rng)};
  c.b = {Vec(dim), ut(rng)};
  for (std::size_t i = 0; i < dim; ++i) {
    c.a.x[i] = ux(rng);
    c.b.x[i] = ux(rng);
  }
  for (std::size_t i = 0; i <= dim; ++i) {
    c.amp1.push_back(i < dim ? ua(rng) : uta(rng));
    c.amp2.push_back(i < dim ? ua(rng) : uta(rng));
  }
  return c;
}

double max_neg_logsnr(const DiscretizedCurve& c) {
  double m = -INFINITY;
  for (const auto& p : c.points) m = std::max(m, -kVp.log_snr(p.t));
  return m;
}

double min_distance(const DiscretizedCurve& c, const Vec& x) {
  double m = INFINITY;
  for (const auto& p : c.points) {
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d += (p.x[i] - x[i]) * (p.x[i] - x[i]);
    m = std::min(m, std::sqrt(d));
  }
  return m;
}

Outcome pullback_collapse() {
  const auto score = score_fn(GaussianMixture::paper_1d(), kVp);
  std::vector<double> dev;
  for (int steps : {64, 128, 256, 512}) dev.push_back(pullback_straightness(score, kVp, {-2.5}, {2.5}, steps));
  bool shrinking = true;
  for (std::size_t i = 1; i < dev.size(); ++i) shrinking = shrinking && dev[i] < dev[i - 1];
  return {dev.back() < 1e-3 && shrinking,
          fmt("max deviation at 512 Heun steps %.3g (< 1e-3); 64/128/256/512 steps: %.3g %.3g %.3g %.3g", dev[3],
              dev[0], dev[1], dev[2], dev[3])};
}

Outcome exp_family_identity() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const std::size_t dim = 1 + k % 3;
    Vec mean(dim);
    for (auto& m : mean) m = std::uniform_real_distribution<double>(-1, 1)(rng);
    const double s2 = std::uniform_real_distribution<double>(0.3, 1.5)(rng);
    const GmmDenoiser model(GaussianMixture::single(mean, s2));
    const auto c = random_curve(rng, dim);
    const double e = curve_energy(model, kVp, c.discretize(512));
    const double ref = oracle::fisher_rao_energy([&](double u) { return posterior_at(mean, s2, c.at(u)); });
    worst = std::max(worst, std::abs(e / ref - 1));
  }
  return {worst < 0.01, fmt("worst relative energy error over 50 curves at N=512: %.3g (< 1e-2)", worst)};
}

Outcome tweedie_second_moment() {
  const auto q = GaussianMixture::paper_1d();
  const GmmDenoiser model(q);
  std::mt19937_64 rng(3);
  Rng lib = make_rng(3);
  NormalSampler normal;
  std::uniform_real_distribution<double> ut(0.2, 0.95);
  auto draw = [&](std::mt19937_64&) { return q.sample(lib, normal); };
  int misses = 0;
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double t = ut(rng);
    const double a = std::sqrt(kOracleVp.alpha2(t)), s2 = kOracleVp.sigma2(t);
    const Vec x{a * q.sample(lib, normal)[0] + std::sqrt(s2) * normal(lib)};
    auto loglik = [&](const Vec& x0) { return -0.5 * (x[0] - a * x0[0]) * (x[0] - a * x0[0]) / s2; };
    const auto est = oracle::importance_sample(draw, loglik, [](const Vec& x0) { return x0[0] * x0[0]; }, 100000, rng);
    const double z = std::abs(expectation_params(model, kVp, {x, t})[1] - est.mean) / est.std_error;
    worst = std::max(worst, z);
    if (z >= 3) ++misses;
  }
  return {misses == 0, fmt("largest |error| / standard error over 100 points: %.2f (< 3)", worst)};
}

Outcome geodesic_vs_pfode() {
  const auto q = GaussianMixture::paper_1d();
  const GmmDenoiser model(q);
  const auto score = score_fn(q, kVp);
  OptimizerConfig cfg;
  cfg.nodes = 10;
  cfg.n_gamma = 512;
  cfg.steps = 2000;
  cfg.learning_rate = 0.01;
  cfg.optimizer = OptimizerKind::adamw;
  bool pass = true;
  std::string detail;
  for (double xT : {1.0, 0.0, -1.0}) {
    const auto traj = solve_pf_ode(score, kVp, {xT}, kVp.T, 0.1, 512);
    const double e_ode = curve_energy(model, kVp, as_curve(traj));
    const double e_geo = optimize_geodesic(model, kVp, traj.front(), traj.back(), cfg).final_energy;
    pass = pass && e_geo <= 0.99 * e_ode;
    detail += fmt("x_T=%g: geodesic %.3f vs PF-ODE %.3f; ", xT, e_geo, e_ode);
  }
  return {pass, detail + "geodesic must be >= 1% lower"};
}

Outcome gradient_correctness() {
  const GmmDenoiser model(GaussianMixture::paper_1d());
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(-2.5, 2.5), ut(0.2, 0.8);
  OptimizerConfig cfg;
  cfg.n_gamma = 128;
  double worst_curve = 0.0;
  for (int k = 0; k < 10; ++k) {
    std::vector<Vec> nodes(4);
    for (auto& n : nodes) n = {ux(rng), ut(rng)};
    const CubicSplineCurve c({{ux(rng)}, ut(rng)}, {{ux(rng)}, ut(rng)}, nodes);
    const auto g = energy_gradient(model, kVp, c, cfg);
    const Vec p = c.flat();
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double h = 1e-6;
      auto cp = c, cm = c;
      Vec v = p;
      v[i] += h;
      cp.set_flat(v);
      v[i] -= 2 * h;
      cm.set_flat(v);
      const double fd = (curve_energy(model, kVp, sample_curve(kVp, cp, cfg)) -
                         curve_energy(model, kVp, sample_curve(kVp, cm, cfg))) / (2 * h);
      err += (g.gradient[i] - fd) * (g.gradient[i] - fd);
      ref += fd * fd;
    }
    worst_curve = std::max(worst_curve, std::sqrt(err / ref));
  }
  const auto well = BoltzmannPotential::double_well();
  double worst_point = 0.0;
  std::uniform_real_distribution<double> uw(-1.8, 1.8), utw(0.05, 0.95);
  for (int k = 0; k < 20; ++k) {
    const Vec x0{uw(rng), uw(rng)};
    const SpacetimePoint z{{uw(rng), uw(rng)}, utw(rng)};
    const Vec g = denoising_energy_grad(well, kVp, x0, z);
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const double h = 1e-6;
      Vec xp = x0, xm = x0;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (denoising_energy(well, kVp, xp, z) - denoising_energy(well, kVp, xm, z)) / (2 * h);
      err += (g[i] - fd) * (g[i] - fd);
      ref += fd * fd;
    }
    worst_point = std::max(worst_point, std::sqrt(err / ref));
  }
  return {worst_curve < 1e-4 && worst_point < 1e-5,
          fmt("energy gradient worst relative error %.3g (< 1e-4); denoising-energy gradient %.3g (< 1e-5)",
              worst_curve, worst_point)};
}

Outcome diffed_sanity() {
  const GmmDenoiser model(GaussianMixture::paper_1d());
  const auto cfg = diffed_default_config(kVp);
  auto d = [&](double a, double b) { return diffed(model, kVp, {a}, {b}, cfg).distance; };
  double self = 0.0;
  for (double x : {-2.5, 0.5, 2.5}) self = std::max(self, d(x, x));
  const double ab = d(-2.5, 2.5), ba = d(2.5, -2.5);
  const double asym = std::abs(ab - ba) / ab;
  const double d1 = d(-2.5, -2.0), d2 = d(-2.5, 0.5);
  const bool ordered = d1 < d2 && d2 < ab;
  return {self < 1e-5 && asym < 0.02 && ordered,
          fmt("self-distance %.2g (< 1e-5); asymmetry %.2g (< 0.02); d(-2.5, b) for b = -2, 0.5, 2.5: %.3f < %.3f < %.3f",
              self, asym, d1, d2, ab)};
}

Outcome transition_paths() {
  const auto u = BoltzmannPotential::double_well();
  const auto model = QuadratureDenoiser::double_well();
  OptimizerConfig cfg;
  cfg.steps = 10000;
  cfg.learning_rate = 0.1;
  cfg.n_gamma = 128;
  cfg.t_min = kVp.t_of_logsnr(4);
  const Vec xa{-1.0, 0.0}, xb{1.0, 0.0};
  const auto geo = sample_curve(kVp, optimize_geodesic(model, kVp, xa, xb, cfg).curve, cfg);
  TpsConfig tc;
  tc.n_paths = 100;
  const auto rep = report_paths(u, sample_transition_paths(u, geo, kVp, tc));
  const auto base = report_paths(u, sample_transition_paths(u, straight_segment({xa, cfg.t_min}, {xb, cfg.t_min}, 128), kVp, tc));
  const double lb = lower_bound_max_energy(u, xa, xb, {});
  const bool in_band = rep.max_energy_mean >= lb && rep.max_energy_mean <= lb + 0.5;
  const bool below = rep.max_energy_mean < base.max_energy_mean;
  const bool evals = rep.n_energy_evals == 128u * 128u;
  return {in_band && below && evals,
          fmt("MaxEnergy %.3f +- %.3f (band [%.3f, %.3f]); straight baseline %.3f; %zu energy evaluations per path",
              rep.max_energy_mean, rep.max_energy_std, lb, lb + 0.5, base.max_energy_mean, rep.n_energy_evals)};
}

Outcome constrained_paths() {
  const GmmDenoiser mix1d(GaussianMixture::paper_1d());
  OptimizerConfig cfg;
  cfg.nodes = 10;
  cfg.n_gamma = 1024;
  cfg.steps = 5000;
  cfg.learning_rate = 0.01;
  cfg.t_min = kVp.t_of_logsnr(2);
  PenaltySpec lv;
  lv.rho = 3.0;
  lv.lambda_schedule = PiecewiseLinear::ramp(1200, 5000, 100);
  const double free_peak = max_neg_logsnr(sample_curve(kVp, optimize_geodesic(mix1d, kVp, Vec{-2.5}, Vec{2.5}, cfg).curve, cfg));
  const double held_peak =
      max_neg_logsnr(sample_curve(kVp, optimize_constrained(mix1d, kVp, Vec{-2.5}, Vec{2.5}, {lv}, cfg).curve, cfg));

  const GmmDenoiser toy(GaussianMixture::toy_2d());
  OptimizerConfig rc;
  rc.nodes = 10;
  rc.n_gamma = 1024;
  rc.steps = 4000;
  rc.learning_rate = 0.1;
  rc.t_min = kVp.t_of_logsnr(2);
  const Vec xa{-2.0, 0.0}, xb{2.0, 0.0}, x_star{0.0, -0.1};
  PenaltySpec ra;
  ra.kind = PenaltyKind::region_avoid;
  ra.rho = INFINITY;
  ra.lambda_schedule = PiecewiseLinear::constant(1.0);
  ra.z_star = {x_star, kVp.t_of_logsnr(4)};
  PenaltySpec lv2 = lv;
  lv2.rho = 3.75;
  lv2.lambda_schedule = default_low_variance_ramp(rc.steps);
  const double free_dist = min_distance(sample_curve(kVp, optimize_geodesic(toy, kVp, xa, xb, rc).curve, rc), x_star);
  const double avoid_dist =
      min_distance(sample_curve(kVp, optimize_constrained(toy, kVp, xa, xb, {ra, lv2}, rc).curve, rc), x_star);
  return {held_peak <= 3.5 && free_peak > 3.0 && avoid_dist > free_dist,
          fmt("max(-log SNR): constrained %.3f (<= 3.5), unconstrained %.3f (> 3); distance to x*: %.3f vs "
              "unconstrained %.3f",
              held_peak, free_peak, avoid_dist, free_dist)};
}

Outcome kl_along_curve_check() {
  std::mt19937_64 rng(9);
  double worst_profile = 0.0, worst_sym = 0.0;
  for (int k = 0; k < 10; ++k) {
    const std::size_t dim = 1 + k % 2;
    Vec mean(dim);
    for (auto& m : mean) m = std::uniform_real_distribution<double>(-1, 1)(rng);
    const double s2 = std::uniform_real_distribution<double>(0.3, 1.5)(rng);
    const GmmDenoiser model(GaussianMixture::single(mean, s2));
    const auto rc = random_curve(rng, dim);
    const auto curve = rc.discretize(512);
    const auto star = random_curve(rng, dim).a;
    const auto ps = posterior_at(mean, s2, star), p0 = posterior_at(mean, s2, curve.points.front());
    const auto from = kl_along_curve(model, kVp, curve, star, KlDirection::from_star);
    const auto to = kl_along_curve(model, kVp, curve, star, KlDirection::to_star);
    for (std::size_t n = 0; n < curve.size(); ++n) {
      const auto pn = posterior_at(mean, s2, curve.points[n]);
      worst_profile = std::max(worst_profile, std::abs(from[n] - (oracle::gaussian_kl(ps, pn) - oracle::gaussian_kl(ps, p0))));
      worst_profile = std::max(worst_profile, std::abs(to[n] - (oracle::gaussian_kl(pn, ps) - oracle::gaussian_kl(p0, ps))));
    }
    const auto z1 = rc.a, z2 = rc.b;
    const auto p1 = posterior_at(mean, s2, z1), p2 = posterior_at(mean, s2, z2);
    const double ref = 0.5 * (oracle::gaussian_kl(p1, p2) + oracle::gaussian_kl(p2, p1));
    worst_sym = std::max(worst_sym, std::abs(symmetrized_kl(model, kVp, z1, z2) - ref));
  }
  return {worst_profile < 1e-3 && worst_sym < 1e-6,
          fmt("relative KL profile worst error %.3g (< 1e-3); symmetrized KL worst error %.3g (< 1e-6)", worst_profile,
              worst_sym)};
}

Outcome learned_backend() {
  const auto q = GaussianMixture::paper_1d();
  const GmmDenoiser analytic(q);
  Rng rng = make_rng(7);
  NormalSampler normal;
  std::vector<Vec> samples;
  for (int i = 0; i < 100000; ++i) samples.push_back(q.sample(rng, normal));
  TrainConfig tc;
  tc.seed = 7;
  const auto mlp = train_denoiser(samples, kVp, tc).model;
  double mse = 0.0;
  int n = 0;
  for (int i = 0; i <= 40; ++i) {
    for (int j = 1; j <= 9; ++j) {
      const Vec x{-4 + 0.2 * i};
      const double d = mlp.denoise(kVp, x, 0.1 * j)[0] - analytic.denoise(kVp, x, 0.1 * j)[0];
      mse += d * d;
      ++n;
    }
  }
  mse /= n;
  OptimizerConfig cfg;
  cfg.nodes = 2;
  cfg.n_gamma = 128;
  cfg.steps = 1000;
  cfg.learning_rate = 0.1;
  const SpacetimePoint a{{-2.3}, 0.35}, b{{2.0}, 0.4};
  const double ea = optimize_geodesic(analytic, kVp, a, b, cfg).final_energy;
  const double em = optimize_geodesic(mlp, kVp, a, b, cfg).final_energy;
  const double rel = std::abs(em - ea) / ea;
  return {rel < 0.10 && mse < 0.05,
          fmt("geodesic energy MLP %.3f vs analytic %.3f (relative %.3f < 0.10); denoiser grid MSE %.4f (< 0.05)", em, ea,
              rel, mse)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  Outcome (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "pullback collapse", 10, pullback_collapse},
      {2, "exponential-family identity", 30, exp_family_identity},
      {3, "Tweedie second moment", 60, tweedie_second_moment},
      {4, "geodesic vs PF-ODE", 120, geodesic_vs_pfode},
      {5, "gradient correctness", 30, gradient_correctness},
      {6, "DiffED sanity", 180, diffed_sanity},
      {7, "transition paths", 300, transition_paths},
      {8, "constrained paths", 300, constrained_paths},
      {9, "KL along curve", 10, kl_along_curve_check},
      {10, "learned-backend consistency", 600, learned_backend},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool on_time = secs <= c.budget_s;
    const bool pass = o.pass && on_time;
    if (!pass) ++failures;
    std::printf("%s C%d %s: %s [%.1f s of %.0f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                c.budget_s, on_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
