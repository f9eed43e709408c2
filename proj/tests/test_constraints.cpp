#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "stgeo/constraints.hpp"
#include "stgeo/models/gmm.hpp"

using namespace stgeo;

namespace {

const NoiseSchedule kVp = NoiseSchedule::vp();
constexpr double kInf = std::numeric_limits<double>::infinity();

const GmmDenoiser& paper_model() {
  static const GmmDenoiser m(GaussianMixture::paper_1d());
  return m;
}
const GmmDenoiser& toy_model() {
  static const GmmDenoiser m(GaussianMixture::toy_2d());
  return m;
}
const GmmDenoiser& gaussian_model() {
  static const GmmDenoiser m(GaussianMixture::single({0.0}, 1.0));
  return m;
}

DiscretizedCurve flat_curve(double t, std::size_t n) {
  return straight_segment({{-1.0}, t}, {{1.0}, t}, n);
}

double max_neg_logsnr(const DiscretizedCurve& c) {
  double m = -kInf;
  for (const auto& p : c.points) m = std::max(m, -kVp.log_snr(p.t));
  return m;
}

double min_distance(const DiscretizedCurve& c, const Vec& x) {
  double m = kInf;
  for (const auto& p : c.points) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d2 += (p.x[i] - x[i]) * (p.x[i] - x[i]);
    m = std::min(m, std::sqrt(d2));
  }
  return m;
}

// Gradient of a single term (no energy) with respect to the spline controls.
Vec term_gradient(const DenoiserModel& model, const CurveTerm& term, const CubicSplineCurve& c,
                  const OptimizerConfig& cfg) {
  const SplineBasis basis(c.spline_kind(), c.n_controls(), cfg.n_gamma);
  const auto ev = evaluate_with_jacobians(model, kVp, c, basis, make_floor(kVp, c, cfg));
  CurveAdjoint adj(ev.curve.size(), c.dim() + 1);
  term.evaluate(ev, 1.0, adj);
  return node_gradient(ev, adj, basis);
}

template <class F>
void expect_gradient_matches(const Vec& g, const CubicSplineCurve& c, F value, double tol) {
  const Vec p = c.flat();
  const double h = 1e-6;
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto cp = c, cm = c;
    Vec q = p;
    q[i] += h;
    cp.set_flat(q);
    q[i] -= 2 * h;
    cm.set_flat(q);
    const double fd = (value(cp) - value(cm)) / (2 * h);
    err += (g[i] - fd) * (g[i] - fd);
    ref += fd * fd;
  }
  ASSERT_GT(ref, 0.0);
  EXPECT_LT(std::sqrt(err / ref), tol);
}

OptimizerConfig low_variance_config() {
  OptimizerConfig cfg;
  cfg.steps = 5000;
  cfg.learning_rate = 0.01;
  cfg.t_min = kVp.t_of_logsnr(2);
  return cfg;
}

PenaltySpec low_variance(double final_lambda) {
  PenaltySpec lv;
  lv.rho = 3.0;
  lv.lambda_schedule = PiecewiseLinear::ramp(1200, 5000, final_lambda);
  return lv;
}

}  // namespace

TEST(PiecewiseLinear, InterpolatesAndClamps) {
  const auto r = PiecewiseLinear::ramp(1200, 5000, 100);
  EXPECT_EQ(r(0), 0.0);
  EXPECT_EQ(r(1200), 0.0);
  EXPECT_DOUBLE_EQ(r(3100), 50.0);
  EXPECT_EQ(r(5000), 100.0);
  EXPECT_EQ(r(9000), 100.0);
  EXPECT_EQ(PiecewiseLinear::constant(2.5)(123), 2.5);
}

TEST(PiecewiseLinear, Validation) {
  EXPECT_THROW(PiecewiseLinear(std::vector<std::pair<double, double>>{}), DomainError);
  EXPECT_THROW(PiecewiseLinear({{0, 1}, {0, 2}}), DomainError);
  EXPECT_THROW(PiecewiseLinear({{0, -1}}), DomainError);
  EXPECT_THROW(PiecewiseLinear({{0, kInf}}), DomainError);
}

TEST(LowVariancePenalty, HighSnrCurveSitsAtThreshold) {
  EXPECT_NEAR(low_variance_penalty(kVp, flat_curve(kVp.t_of_logsnr(5), 64), 3.0), 3.0, 1e-12);
}

TEST(LowVariancePenalty, LowSnrCurvePaysNegativeLogSnr) {
  EXPECT_NEAR(low_variance_penalty(kVp, flat_curve(kVp.t_of_logsnr(-5), 64), 3.0), 5.0, 1e-9);
}

TEST(LowVariancePenalty, BoundedByScheduleRange) {
  const auto c = straight_segment({{0.0}, 0.01}, {{0.0}, 0.99}, 100);
  const double p = low_variance_penalty(kVp, c, 3.0);
  EXPECT_GE(p, 3.0);
  EXPECT_LE(p, std::max(-kVp.lambda_min, 3.0));
}

TEST(RegionAvoidPenalty, BoundedByRho) {
  const SpacetimePoint z_star{{0.0}, 0.5};
  const auto c = straight_segment({{3.0}, 0.2}, {{5.0}, 0.2}, 64);
  for (double rho : {-10.0, 0.0, 0.5, 10.0}) {
    EXPECT_LE(region_avoid_penalty(gaussian_model(), kVp, c, z_star, rho), rho + 1e-12);
  }
}

TEST(RegionAvoidPenalty, CurveThroughStarPaysMore) {
  const SpacetimePoint z_star{{0.0}, 0.5};
  const auto through = straight_segment({{-2.0}, 0.5}, {{2.0}, 0.5}, 129);
  // Same endpoints, detouring towards low noise (sharper posteriors) around z*.
  DiscretizedCurve around = through;
  for (std::size_t k = 0; k < around.size(); ++k) {
    const double s = static_cast<double>(k) / 128.0;
    around.points[k].t = 0.5 - 0.3 * std::sin(M_PI * s);
  }
  const double p_through = region_avoid_penalty(gaussian_model(), kVp, through, z_star, kInf);
  const double p_around = region_avoid_penalty(gaussian_model(), kVp, around, z_star, kInf);
  EXPECT_GT(p_through, p_around);
  // The relative KL is smallest where the curve meets z*.
  const Vec kl = kl_along_curve(gaussian_model(), kVp, through, z_star, KlDirection::from_star);
  EXPECT_EQ(std::min_element(kl.begin(), kl.end()) - kl.begin(), 64);
}

TEST(RegionAvoidPenalty, InfiniteRhoGivesRawIntegral) {
  const SpacetimePoint z_star{{0.3}, 0.4};
  const auto c = straight_segment({{-2.0}, 0.3}, {{2.0}, 0.6}, 65);
  const Vec kl = kl_along_curve(paper_model(), kVp, c, z_star, KlDirection::from_star);
  double raw = 0.0;
  for (std::size_t k = 0; k < kl.size(); ++k) raw += (k == 0 || k + 1 == kl.size() ? 0.5 : 1.0) * -kl[k];
  raw /= 64.0;
  EXPECT_NEAR(region_avoid_penalty(paper_model(), kVp, c, z_star, kInf), raw, 1e-12);
}

TEST(RegionAvoidTerm, AdjointMatchesFiniteDifferences) {
  const CubicSplineCurve c({{-2.0, 0.0}, 0.3}, {{2.0, 0.0}, 0.3}, {{-1.0, 0.4, 0.5}, {0.2, -0.3, 0.6}, {1.1, 0.2, 0.4}});
  OptimizerConfig cfg;
  cfg.n_gamma = 64;
  PenaltySpec spec;
  spec.kind = PenaltyKind::region_avoid;
  spec.z_star = {{0.0, -0.1}, kVp.t_of_logsnr(4)};
  for (double rho : {kInf, -1e6}) {
    spec.rho = rho;
    const auto term = region_avoid_term(toy_model(), kVp, spec);
    const Vec g = term_gradient(toy_model(), term, c, cfg);
    if (rho < 0) {
      for (double v : g) EXPECT_EQ(v, 0.0);  // clamped everywhere
      continue;
    }
    expect_gradient_matches(g, c, [&](const CubicSplineCurve& s) {
      return region_avoid_penalty(toy_model(), kVp, sample_curve(kVp, s, cfg), spec.z_star, rho);
    }, 1e-5);
  }
}

TEST(LowVarianceTerm, AdjointMatchesFiniteDifferences) {
  const CubicSplineCurve c({{-2.0}, 0.3}, {{2.0}, 0.35}, {{-1.0, 0.7}, {1.0, 0.8}});
  OptimizerConfig cfg;
  cfg.n_gamma = 64;
  PenaltySpec spec;
  spec.rho = -100.0;  // active everywhere: smooth in the controls
  const Vec g = term_gradient(paper_model(), low_variance_term(kVp, spec), c, cfg);
  expect_gradient_matches(g, c, [&](const CubicSplineCurve& s) {
    return low_variance_penalty(kVp, sample_curve(kVp, s, cfg), spec.rho);
  }, 1e-6);
}

TEST(OptimizeConstrained, EmptyPenaltiesMatchUnconstrainedBitwise) {
  OptimizerConfig cfg;
  cfg.steps = 200;
  cfg.t_min = 0.3;
  const auto a = optimize_geodesic(paper_model(), kVp, Vec{-2.0}, Vec{2.0}, cfg);
  const auto b = optimize_constrained(paper_model(), kVp, Vec{-2.0}, Vec{2.0}, {}, cfg);
  EXPECT_EQ(a.energy_trace, b.energy_trace);
  EXPECT_EQ(a.curve.flat(), b.curve.flat());
}

TEST(OptimizeConstrained, ZeroLambdaMatchesUnconstrainedBitwise) {
  OptimizerConfig cfg;
  cfg.steps = 200;
  cfg.t_min = 0.3;
  PenaltySpec lv;
  lv.lambda_schedule = PiecewiseLinear::constant(0.0);
  PenaltySpec ra;
  ra.kind = PenaltyKind::region_avoid;
  ra.rho = kInf;
  ra.z_star = {{0.0}, 0.5};
  const auto a = optimize_geodesic(paper_model(), kVp, Vec{-2.0}, Vec{2.0}, cfg);
  const auto b = optimize_constrained(paper_model(), kVp, Vec{-2.0}, Vec{2.0}, {lv, ra}, cfg);
  EXPECT_EQ(a.energy_trace, b.energy_trace);
  EXPECT_EQ(a.curve.flat(), b.curve.flat());
  ASSERT_EQ(b.term_traces.size(), 2u);
  EXPECT_EQ(b.term_traces[0].size(), b.energy_trace.size());
}

TEST(OptimizeConstrained, NegativeLambdaRejected) {
  CurveTerm bad;
  bad.name = "bad";
  bad.weight = [](int) { return -1.0; };
  bad.evaluate = [](const CurveEvaluation&, double, CurveAdjoint&) { return 0.0; };
  OptimizerConfig cfg;
  cfg.t_min = 0.3;
  cfg.steps = 2;
  const auto init = initial_curve(kVp, {{-1.0}, 0.3}, {{1.0}, 0.3}, cfg);
  EXPECT_THROW(optimize_objective(paper_model(), kVp, init, cfg, {bad}), DomainError);
}

TEST(OptimizeConstrained, RegionAvoidNeedsMatchingStar) {
  PenaltySpec ra;
  ra.kind = PenaltyKind::region_avoid;
  ra.z_star = {{0.0, 0.0}, 0.5};
  OptimizerConfig cfg;
  cfg.t_min = 0.3;
  EXPECT_THROW(optimize_constrained(paper_model(), kVp, Vec{-1.0}, Vec{1.0}, {ra}, cfg), DomainError);
  ra.z_star = {{0.0}, 0.0};
  EXPECT_THROW(optimize_constrained(paper_model(), kVp, Vec{-1.0}, Vec{1.0}, {ra}, cfg), DomainError);
}

TEST(DefaultLowVariance, AddedOnlyForRegionAvoid) {
  PenaltySpec ra;
  ra.kind = PenaltyKind::region_avoid;
  const auto p = with_default_low_variance({ra}, 5000);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[1].kind, PenaltyKind::low_variance);
  EXPECT_EQ(p[1].rho, 3.0);
  EXPECT_EQ(p[1].lambda_schedule(1200), 0.0);
  EXPECT_EQ(p[1].lambda_schedule(5000), 100.0);
  EXPECT_EQ(with_default_low_variance({ra, PenaltySpec{}}, 5000).size(), 2u);
  EXPECT_TRUE(with_default_low_variance({}, 5000).empty());
}

TEST(OptimizeConstrained, LowVarianceRampKeepsCurveAboveThreshold) {
  const auto cfg = low_variance_config();
  const auto u = optimize_geodesic(paper_model(), kVp, Vec{-2.5}, Vec{2.5}, cfg);
  const auto c = optimize_constrained(paper_model(), kVp, Vec{-2.5}, Vec{2.5}, {low_variance(100)}, cfg);
  EXPECT_GT(max_neg_logsnr(sample_curve(kVp, u.curve, cfg)), 3.5);
  EXPECT_LE(max_neg_logsnr(sample_curve(kVp, c.curve, cfg)), 3.5);
}

TEST(OptimizeConstrained, RegionAvoidPushesCurveAway) {
  OptimizerConfig cfg;
  cfg.steps = 4000;
  cfg.learning_rate = 0.1;
  cfg.t_min = kVp.t_of_logsnr(2);
  const Vec xa{-2.0, 0.0}, xb{2.0, 0.0}, x_star{0.0, -0.1};
  PenaltySpec ra;
  ra.kind = PenaltyKind::region_avoid;
  ra.rho = kInf;
  ra.lambda_schedule = PiecewiseLinear::constant(1.0);
  ra.z_star = {x_star, kVp.t_of_logsnr(4)};
  const auto u = optimize_geodesic(toy_model(), kVp, xa, xb, cfg);
  const auto c = optimize_constrained(toy_model(), kVp, xa, xb, with_default_low_variance({ra}, cfg.steps), cfg);
  EXPECT_GT(min_distance(sample_curve(kVp, c.curve, cfg), x_star), min_distance(sample_curve(kVp, u.curve, cfg), x_star));
}

TEST(ConstraintsProperty, TenfoldLambdaNeverIncreasesPenalty) {
  const auto cfg = low_variance_config();
  const auto a = optimize_constrained(paper_model(), kVp, Vec{-2.5}, Vec{2.5}, {low_variance(100)}, cfg);
  const auto b = optimize_constrained(paper_model(), kVp, Vec{-2.5}, Vec{2.5}, {low_variance(1000)}, cfg);
  EXPECT_LE(b.final_terms[0], a.final_terms[0] + 1e-6);
}
