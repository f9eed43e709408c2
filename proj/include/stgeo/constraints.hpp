#pragma once

// Penalized geodesics: E(gamma) + sum_i lambda_i(step) * mean_s h_i(gamma_s)
// with a low-variance (SNR floor) penalty and a region-avoidance penalty built
// on the relative KL profile from a reference point z*.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "stgeo/geodesic.hpp"

namespace stgeo {

/// lambda(step): linear between knots, constant outside them.
class PiecewiseLinear {
 public:
  PiecewiseLinear() : knots_{{0.0, 0.0}} {}
  explicit PiecewiseLinear(std::vector<std::pair<double, double>> knots) : knots_(std::move(knots)) {
    if (knots_.empty()) throw DomainError("lambda schedule needs at least one knot");
    for (std::size_t i = 0; i < knots_.size(); ++i) {
      if (!(knots_[i].second >= 0) || !std::isfinite(knots_[i].second))
        throw DomainError("lambda schedule values must be finite and >= 0");
      if (i > 0 && !(knots_[i].first > knots_[i - 1].first))
        throw DomainError("lambda schedule steps must be strictly increasing");
    }
  }

  static PiecewiseLinear constant(double v) { return PiecewiseLinear({{0.0, v}}); }
  /// 0 up to `hold`, then linear to `value` at `end`.
  static PiecewiseLinear ramp(double hold, double end, double value) {
    return PiecewiseLinear({{0.0, 0.0}, {hold, 0.0}, {end, value}});
  }

  double operator()(double step) const {
    if (step <= knots_.front().first) return knots_.front().second;
    if (step >= knots_.back().first) return knots_.back().second;
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), step,
                                     [](double s, const auto& k) { return s < k.first; });
    const auto& [s1, v1] = *it;
    const auto& [s0, v0] = *(it - 1);
    return v0 + (v1 - v0) * (step - s0) / (s1 - s0);
  }

  const std::vector<std::pair<double, double>>& knots() const { return knots_; }

 private:
  std::vector<std::pair<double, double>> knots_;
};

enum class PenaltyKind { low_variance, region_avoid };

struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::low_variance;
  double rho = 3.0;  // region_avoid: +inf disables the threshold
  PiecewiseLinear lambda_schedule;
  SpacetimePoint z_star;  // region_avoid only
};

namespace detail {

/// Trapezoid weights / (N-1): the average of a constant sequence is exact.
inline double avg_weight(std::size_t k, std::size_t n) {
  const double w = (k == 0 || k + 1 == n) ? 0.5 : 1.0;
  return w / static_cast<double>(n - 1);
}

}  // namespace detail

/// Average over the curve of max(-logSNR(t_n), rho).
inline double low_variance_penalty(const NoiseSchedule& schedule, const DiscretizedCurve& curve, double rho = 3.0) {
  if (curve.size() < 2) throw DomainError("low_variance_penalty: need at least 2 points");
  double acc = 0.0;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    acc += detail::avg_weight(k, curve.size()) * std::max(-schedule.log_snr(curve.points[k].t), rho);
  }
  return acc;
}

inline double region_avoid_from_profile(const Vec& kl_rel, double rho) {
  double acc = 0.0;
  for (std::size_t k = 0; k < kl_rel.size(); ++k) {
    acc += detail::avg_weight(k, kl_rel.size()) * std::min(rho, -kl_rel[k]);
  }
  return acc;
}

/// Average over the curve of min(rho, -KL_rel(s)), KL_rel the relative profile
/// of KL(p(.|z*) ‖ p(.|gamma_s)).
inline double region_avoid_penalty(const DenoiserModel& model, const NoiseSchedule& schedule,
                                   const DiscretizedCurve& curve, const SpacetimePoint& z_star, double rho,
                                   const DivergenceConfig& div = {}) {
  schedule.check_time(z_star.t);
  return region_avoid_from_profile(kl_along_curve(model, schedule, curve, z_star, KlDirection::from_star, div), rho);
}

/// Low-variance term; its adjoint acts on t directly.
inline CurveTerm low_variance_term(const NoiseSchedule& schedule, const PenaltySpec& spec) {
  CurveTerm term;
  term.name = "low_variance";
  term.weight = [sched = spec.lambda_schedule](int step) { return sched(step); };
  term.evaluate = [&schedule, rho = spec.rho](const CurveEvaluation& ev, double weight, CurveAdjoint& adj) {
    const std::size_t n = ev.curve.size();
    const std::size_t d = ev.curve.dim();
    for (std::size_t k = 1; k + 1 < n; ++k) {
      const double t = ev.curve.points[k].t;
      if (-schedule.log_snr(t) > rho) adj.z[k][d] -= weight * detail::avg_weight(k, n) * schedule.dlog_snr_dt(t);
    }
    return low_variance_penalty(schedule, ev.curve, rho);
  };
  return term;
}

/// Region-avoidance term. The adjoint runs the KL profile's linear operations
/// (derivative stencils, cumulative trapezoid, end correction) in reverse.
inline CurveTerm region_avoid_term(const DenoiserModel& model, const NoiseSchedule& schedule,
                                   const PenaltySpec& spec, const DivergenceConfig& div = {}) {
  schedule.check_time(spec.z_star.t);
  if (spec.z_star.dim() != model.dim()) throw DomainError("region_avoid: z_star dimension does not match the model");
  CurveTerm term;
  term.name = "region_avoid";
  term.weight = [sched = spec.lambda_schedule](int step) { return sched(step); };
  term.evaluate = [&model, &schedule, spec, div](const CurveEvaluation& ev, double weight, CurveAdjoint& adj) {
    const auto& st = ev.stats;
    const std::size_t n = st.size();
    const std::size_t w = st.front().eta.size();
    const auto star = point_stats(model, schedule, spec.z_star, div, n);
    const Vec kl = kl_profile_from_stats(st, star, KlDirection::from_star);
    const double value = region_avoid_from_profile(kl, spec.rho);
    if (weight == 0.0) return value;

    // a_k = dP/dI_k.
    Vec a(n, 0.0);
    for (std::size_t k = 1; k < n; ++k) {
      if (-kl[k] <= spec.rho) a[k] = -weight * detail::avg_weight(k, n);
    }
    // I_k = sum_j T_kj f_j - h^2/12 ((D f)_k - (D f)_0).
    const double h = 1.0 / static_cast<double>(n - 1);
    Vec gf(n, 0.0);
    double suffix = 0.0;  // sum_{j > k} a_j
    for (std::size_t k = n; k-- > 0;) {
      gf[k] = h * (k == 0 ? 0.5 * suffix : 0.5 * a[k] + suffix);
      suffix += a[k];
    }
    if (n >= 5) {
      Vec b(a);
      double total = 0.0;
      for (double v : a) total += v;
      b[0] -= total;
      const Vec dtb = curve_derivative_adjoint(b);
      for (std::size_t k = 0; k < n; ++k) gf[k] -= h * h / 12.0 * dtb[k];
    }
    // f_k = sum_i (D eta_i)_k (mu_{k,i} - mu*_i).
    Vec column(n), weighted(n);
    for (std::size_t i = 0; i < w; ++i) {
      for (std::size_t k = 0; k < n; ++k) column[k] = st[k].eta[i];
      const Vec deta = curve_derivative(column);
      for (std::size_t k = 0; k < n; ++k) {
        adj.mu[k][i] += gf[k] * deta[k];
        weighted[k] = gf[k] * (st[k].mu[i] - star.mu[i]);
      }
      const Vec ge = curve_derivative_adjoint(weighted);
      for (std::size_t k = 0; k < n; ++k) adj.eta[k][i] += ge[k];
    }
    return value;
  };
  return term;
}

inline std::vector<CurveTerm> make_terms(const DenoiserModel& model, const NoiseSchedule& schedule,
                                         const std::vector<PenaltySpec>& penalties,
                                         const DivergenceConfig& div = {}) {
  std::vector<CurveTerm> terms;
  for (const auto& p : penalties) {
    terms.push_back(p.kind == PenaltyKind::low_variance ? low_variance_term(schedule, p)
                                                        : region_avoid_term(model, schedule, p, div));
  }
  return terms;
}

/// Lambda ramp for the low-variance penalty: 0 for the first 24% of the run,
/// then linear up to 100 (1200 / 5000 steps at full length).
inline PiecewiseLinear default_low_variance_ramp(int total_steps) {
  const double hold = 0.24 * total_steps;
  return PiecewiseLinear::ramp(hold, std::max(hold + 1.0, static_cast<double>(total_steps)), 100.0);
}

/// Adds a low-variance penalty (rho = 3, default ramp) when a region-avoid
/// penalty is present without one.
inline std::vector<PenaltySpec> with_default_low_variance(std::vector<PenaltySpec> penalties, int total_steps) {
  const bool has_region =
      std::any_of(penalties.begin(), penalties.end(), [](const auto& p) { return p.kind == PenaltyKind::region_avoid; });
  const bool has_low =
      std::any_of(penalties.begin(), penalties.end(), [](const auto& p) { return p.kind == PenaltyKind::low_variance; });
  if (has_region && !has_low) {
    PenaltySpec lv;
    lv.kind = PenaltyKind::low_variance;
    lv.rho = 3.0;
    lv.lambda_schedule = default_low_variance_ramp(total_steps);
    penalties.push_back(lv);
  }
  return penalties;
}

inline GeodesicResult optimize_constrained(const DenoiserModel& model, const NoiseSchedule& schedule,
                                           const SpacetimePoint& a, const SpacetimePoint& b,
                                           const std::vector<PenaltySpec>& penalties, const OptimizerConfig& cfg) {
  const auto terms = make_terms(model, schedule, penalties, cfg.divergence);
  return optimize_objective(model, schedule, initial_curve(schedule, a, b, cfg), cfg, terms);
}

inline GeodesicResult optimize_constrained(const DenoiserModel& model, const NoiseSchedule& schedule, const Vec& x_a,
                                           const Vec& x_b, const std::vector<PenaltySpec>& penalties,
                                           const OptimizerConfig& cfg) {
  if (!(cfg.t_min > 0)) throw DomainError("optimize_constrained: t_min must be > 0 to embed data points");
  return optimize_constrained(model, schedule, SpacetimePoint{x_a, cfg.t_min}, SpacetimePoint{x_b, cfg.t_min},
                              penalties, cfg);
}

}  // namespace stgeo
