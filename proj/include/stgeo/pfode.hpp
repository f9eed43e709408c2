#pragma once

// Probability-flow ODE and reverse SDE on a uniform time grid, plus the
// encode–decode check that PF-ODE pullback geodesics decode to straight lines.

#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "stgeo/geometry.hpp"
#include "stgeo/models/denoiser.hpp"
#include "stgeo/models/gmm.hpp"
#include "stgeo/rng.hpp"
#include "stgeo/schedule.hpp"

namespace stgeo {

using ScoreFn = std::function<Vec(std::span<const double> x, double t)>;

/// Holds `model` by reference.
inline ScoreFn score_fn(const DenoiserModel& model, NoiseSchedule schedule) {
  return [&model, schedule](std::span<const double> x, double t) { return score_from_denoiser(model, schedule, x, t); };
}

inline ScoreFn score_fn(GaussianMixture mixture, NoiseSchedule schedule) {
  return [mixture = std::move(mixture), schedule](std::span<const double> x, double t) {
    return gmm_score(mixture, schedule, Vec(x.begin(), x.end()), t);
  };
}

enum class OdeMethod { euler, heun };

using Trajectory = std::vector<SpacetimePoint>;

namespace detail {

inline void check_solver_args(const NoiseSchedule& schedule, double t_start, double t_end, int steps) {
  if (steps < 1) throw DomainError("solver: steps must be >= 1");
  schedule.check_time(t_start);
  schedule.check_time(t_end);
  if (t_start == t_end) throw DomainError("solver: t_start equals t_end");
}

inline void check_finite(const Vec& x, int step, const char* who) {
  for (double v : x) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << who << ": non-finite state at step " << step;
      throw NumericalError(os.str());
    }
  }
}

/// f_t x - score_coef * g_t^2 * score(x, t).
inline Vec drift(const ScoreFn& score, const NoiseSchedule& schedule, const Vec& x, double t, double score_coef) {
  const double f = schedule.drift(t), g2 = schedule.diffusion2(t);
  Vec s = score(x, t);
  for (std::size_t i = 0; i < x.size(); ++i) s[i] = f * x[i] - score_coef * g2 * s[i];
  return s;
}

}  // namespace detail

/// Integrates dx/dt = f_t x - ½ g_t² ∇log p_t(x) from t_start to t_end (either
/// direction: decreasing t samples, increasing t encodes). Heun's correction is
/// skipped on the final step. Returns steps + 1 states.
inline Trajectory solve_pf_ode(const ScoreFn& score, const NoiseSchedule& schedule, const Vec& x_start,
                               double t_start, double t_end, int steps, OdeMethod method = OdeMethod::euler) {
  detail::check_solver_args(schedule, t_start, t_end, steps);
  Trajectory out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  Vec x = x_start;
  out.push_back({x, t_start});
  const double h = (t_end - t_start) / steps;
  Vec xp(x.size());
  for (int k = 0; k < steps; ++k) {
    const double t0 = t_start + k * h;
    const double t1 = k + 1 == steps ? t_end : t_start + (k + 1) * h;
    const double dt = t1 - t0;
    const Vec d0 = detail::drift(score, schedule, x, t0, 0.5);
    for (std::size_t i = 0; i < x.size(); ++i) xp[i] = x[i] + dt * d0[i];
    if (method == OdeMethod::heun && k + 1 < steps) {
      const Vec d1 = detail::drift(score, schedule, xp, t1, 0.5);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.5 * dt * (d0[i] + d1[i]);
    } else {
      x = xp;
    }
    detail::check_finite(x, k, "solve_pf_ode");
    out.push_back({x, t1});
  }
  return out;
}

struct SdeOptions {
  double noise_scale = 1.0;  // 0 switches the Brownian term off (test mode)
};

/// Euler–Maruyama on dx = (f_t x - g_t² ∇log p_t) dt + g_t dW̄ from t_start down to t_end.
inline Trajectory solve_reverse_sde(const ScoreFn& score, const NoiseSchedule& schedule, const Vec& x_start,
                                    double t_start, double t_end, int steps, std::uint64_t seed,
                                    const SdeOptions& opts = {}) {
  detail::check_solver_args(schedule, t_start, t_end, steps);
  if (!(t_start > t_end)) throw DomainError("solve_reverse_sde: t_start must exceed t_end");
  Rng rng = make_rng(seed);
  NormalSampler normal;
  Trajectory out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  Vec x = x_start;
  out.push_back({x, t_start});
  const double h = (t_start - t_end) / steps;
  for (int k = 0; k < steps; ++k) {
    const double t0 = t_start - k * h;
    const double t1 = k + 1 == steps ? t_end : t_start - (k + 1) * h;
    const double dt = t1 - t0;  // negative
    const Vec d = detail::drift(score, schedule, x, t0, 1.0);
    const double g = std::sqrt(schedule.diffusion2(t0)) * opts.noise_scale;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += dt * d[i];
      if (g != 0.0) x[i] += g * std::sqrt(-dt) * normal(rng);
    }
    detail::check_finite(x, k, "solve_reverse_sde");
    out.push_back({x, t1});
  }
  return out;
}

struct PullbackOptions {
  double t_data = 1e-3;  // data time: the schedule's time domain excludes t = 0
  int n_interp = 33;     // interpolants along the segment, endpoints included
  OdeMethod method = OdeMethod::heun;
};

/// Encodes every interpolant x_s = (1-s) x_a + s x_b to t = T, decodes each
/// latent back to t_data and returns max_s ‖decoded(s) - x_s‖.
inline double pullback_straightness(const ScoreFn& score, const NoiseSchedule& schedule, const Vec& x_a,
                                    const Vec& x_b, int steps, const PullbackOptions& opts = {}) {
  if (x_a.size() != x_b.size()) throw DomainError("pullback_straightness: endpoint dimensions differ");
  if (opts.n_interp < 2) throw DomainError("pullback_straightness: need at least 2 interpolants");
  double worst = 0.0;
  Vec xs(x_a.size());
  for (int j = 0; j < opts.n_interp; ++j) {
    const double s = static_cast<double>(j) / (opts.n_interp - 1);
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = (1 - s) * x_a[i] + s * x_b[i];
    const Vec latent = solve_pf_ode(score, schedule, xs, opts.t_data, schedule.T, steps, opts.method).back().x;
    const Vec back = solve_pf_ode(score, schedule, latent, schedule.T, opts.t_data, steps, opts.method).back().x;
    double d2 = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) d2 += (back[i] - xs[i]) * (back[i] - xs[i]);
    worst = std::max(worst, std::sqrt(d2));
  }
  return worst;
}

/// Spacetime curve made from a solver trajectory.
inline DiscretizedCurve as_curve(const Trajectory& traj) {
  DiscretizedCurve c;
  c.points = traj;
  return c;
}

}  // namespace stgeo
