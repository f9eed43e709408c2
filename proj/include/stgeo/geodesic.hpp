#pragma once

// Spacetime geodesics by direct energy minimization. The curve is an
// interpolating spline through fixed endpoints and K free control points in
// R^{D+1}; it is sampled at N_gamma uniform parameters, the energy is formed
// from per-point (eta, mu), and its exact gradient is pushed back to the
// control points with forward-mode duals (one pass per spacetime coordinate).

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stgeo/geometry.hpp"
#include "stgeo/optimizer.hpp"
#include "stgeo/spline.hpp"

namespace stgeo {

enum class TimeFloorMode { clamp, softplus };
enum class Parametrization { spline, points };

/// Keeps interior times inside [t_min, T]. The softplus variant is smooth:
/// t = t_min + softplus(k (t_raw - t_min)) / k, mirrored at T.
struct TimeFloor {
  TimeFloorMode mode = TimeFloorMode::softplus;
  double t_min = 0.0;
  double t_max = 1.0;
  double sharpness = 0.0;  // k; 0 -> 100 / t_min

  /// (t, dt/dt_raw)
  std::pair<double, double> apply(double raw) const {
    if (mode == TimeFloorMode::clamp) {
      if (raw < t_min) return {t_min, 0.0};
      if (raw > t_max) return {t_max, 0.0};
      return {raw, 1.0};
    }
    const double k = sharpness > 0 ? sharpness : 100.0 / t_min;
    const double lo = t_min + fn::softplus(k * (raw - t_min)) / k;
    const double dlo = fn::sigmoid(k * (raw - t_min));
    const double t = t_max - fn::softplus(k * (t_max - lo)) / k;
    return {t, fn::sigmoid(k * (t_max - lo)) * dlo};
  }
};

struct OptimizerConfig {
  int steps = 1000;
  double learning_rate = 0.1;
  OptimizerKind optimizer = OptimizerKind::adam;
  double weight_decay = 0.01;  // AdamW only
  std::size_t n_gamma = 128;
  double t_min = 0.0;  // 0 -> min of the endpoint times
  TimeFloorMode t_floor_mode = TimeFloorMode::softplus;
  double floor_sharpness = 0.0;
  std::size_t nodes = 10;
  Parametrization parametrization = Parametrization::spline;
  std::optional<double> t_peak;  // default: t at log SNR = -2
  int record_every = 1;
  DivergenceConfig divergence;

  void validate() const {
    if (steps < 0) throw DomainError("optimizer: steps must be >= 0");
    if (!(learning_rate > 0)) throw DomainError("optimizer: learning_rate must be > 0");
    if (n_gamma < 2) throw DomainError("optimizer: n_gamma must be >= 2");
    if (record_every < 1) throw DomainError("optimizer: record_every must be >= 1");
    if (t_min < 0) throw DomainError("optimizer: t_min must be > 0");
  }
};

/// Fixed endpoints plus free interior control points; control j sits at u_j = j/(K+1).
class CubicSplineCurve {
 public:
  CubicSplineCurve() = default;
  CubicSplineCurve(SpacetimePoint a, SpacetimePoint b, std::vector<Vec> nodes,
                   Parametrization kind = Parametrization::spline)
      : a_(std::move(a)), b_(std::move(b)), nodes_(std::move(nodes)), kind_(kind) {
    if (a_.dim() != b_.dim() || a_.dim() == 0) throw DomainError("curve endpoints must share a dimension >= 1");
    for (const auto& n : nodes_) {
      if (n.size() != a_.dim() + 1) throw DomainError("curve node must have D+1 coordinates");
    }
  }

  /// Straight in x; time t_lin(u) + 4u(1-u)(t_peak - mean endpoint time), never below t_lin.
  static CubicSplineCurve initial(const SpacetimePoint& a, const SpacetimePoint& b, std::size_t n_nodes,
                                  double t_peak, Parametrization kind = Parametrization::spline) {
    std::vector<Vec> nodes(n_nodes);
    const double bump = std::max(0.0, t_peak - 0.5 * (a.t + b.t));
    for (std::size_t j = 0; j < n_nodes; ++j) {
      const double u = static_cast<double>(j + 1) / static_cast<double>(n_nodes + 1);
      Vec& n = nodes[j];
      n.resize(a.dim() + 1);
      for (std::size_t i = 0; i < a.dim(); ++i) n[i] = (1 - u) * a.x[i] + u * b.x[i];
      n.back() = (1 - u) * a.t + u * b.t + 4.0 * u * (1 - u) * bump;
    }
    return CubicSplineCurve(a, b, std::move(nodes), kind);
  }

  const SpacetimePoint& endpoint0() const { return a_; }
  const SpacetimePoint& endpoint1() const { return b_; }
  const std::vector<Vec>& nodes() const { return nodes_; }
  std::vector<Vec>& nodes() { return nodes_; }
  Parametrization parametrization() const { return kind_; }
  std::size_t dim() const { return a_.dim(); }
  std::size_t n_controls() const { return nodes_.size() + 2; }

  SplineKind spline_kind() const {
    return kind_ == Parametrization::spline ? SplineKind::natural_cubic : SplineKind::linear;
  }

  /// Control value j (0 and K+1 are the endpoints), coordinate c (D = time).
  double control(std::size_t j, std::size_t c) const {
    const SpacetimePoint* e = j == 0 ? &a_ : (j + 1 == n_controls() ? &b_ : nullptr);
    if (e) return c < dim() ? e->x[c] : e->t;
    return nodes_[j - 1][c];
  }

  /// Samples the curve at n uniform parameters; endpoints are copied bit-exactly and
  /// interior times pass through the floor.
  DiscretizedCurve discretize(const SplineBasis& basis, const TimeFloor& floor, Vec* dt_draw = nullptr) const {
    if (basis.cols() != n_controls()) throw DomainError("spline basis does not match the control count");
    const std::size_t n = basis.rows();
    DiscretizedCurve out;
    out.points.resize(n);
    if (dt_draw) dt_draw->assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      auto& p = out.points[k];
      if (k == 0) { p = a_; continue; }
      if (k + 1 == n) { p = b_; continue; }
      // Offsets from endpoint0: the weights sum to 1 only up to rounding, and a
      // constant curve must evaluate to exactly its constant.
      p.x = a_.x;
      double t_raw = a_.t;
      for (std::size_t j = 1; j < n_controls(); ++j) {
        const double w = basis(k, j);
        if (w == 0.0) continue;
        for (std::size_t i = 0; i < dim(); ++i) p.x[i] += w * (control(j, i) - a_.x[i]);
        t_raw += w * (control(j, dim()) - a_.t);
      }
      const auto [t, dt] = floor.apply(t_raw);
      p.t = t;
      if (dt_draw) (*dt_draw)[k] = dt;
    }
    return out;
  }

  DiscretizedCurve discretize(std::size_t n, const TimeFloor& floor) const {
    return discretize(SplineBasis(spline_kind(), n_controls(), n), floor);
  }

  Vec flat() const {
    Vec v;
    for (const auto& n : nodes_) v.insert(v.end(), n.begin(), n.end());
    return v;
  }
  void set_flat(const Vec& v) {
    std::size_t k = 0;
    for (auto& n : nodes_) {
      for (auto& c : n) c = v[k++];
    }
  }

 private:
  SpacetimePoint a_, b_;
  std::vector<Vec> nodes_;
  Parametrization kind_ = Parametrization::spline;
};

/// Per-point values and first derivatives with respect to z = (x, t).
struct CurveEvaluation {
  DiscretizedCurve curve;
  std::vector<ExpFamilyStats> stats;
  std::vector<Vec> jac_eta, jac_mu;  // (D+1) x (D+1), row = component, col = coordinate; empty at endpoints
  Vec dt_draw;
};

/// Accumulated dObjective/d(eta_n), d(mu_n) and direct d/dz_n.
struct CurveAdjoint {
  std::vector<Vec> eta, mu, z;

  explicit CurveAdjoint(std::size_t n = 0, std::size_t width = 0)
      : eta(n, Vec(width, 0.0)), mu(n, Vec(width, 0.0)), z(n, Vec(width, 0.0)) {}
};

namespace detail {

/// How the divergence enters the Jacobians at one point.
struct DivergenceTangent {
  bool exact = false;          // closed form, differentiated exactly
  const std::vector<Vec>* probes = nullptr;  // probed, differentiated by nested duals
  double scale = 0.0;
  double frozen = 0.0;         // otherwise held fixed (derivative dropped)
};

/// eta and mu with one tangent direction.
inline std::pair<std::vector<Dual1>, std::vector<Dual1>> dual_stats(const DenoiserModel& model,
                                                                    const NoiseSchedule& schedule,
                                                                    std::span<const Dual1> x, Dual1 t,
                                                                    const DivergenceTangent& dv) {
  auto eta = natural_params<Dual1>(schedule, x, t);
  std::vector<Dual1> xh;
  Dual1 div(dv.frozen);
  if (dv.exact) {
    std::tie(xh, div) = model.denoise_with_divergence(schedule, x, t);
  } else {
    xh = model.denoise(schedule, x, t);
    if (dv.probes) div = hutchinson_divergence_tangent(model, schedule, x, t, *dv.probes, dv.scale);
  }
  const auto [alpha, sigma] = schedule.alpha_sigma(t);
  Dual1 n2(0.0);
  for (const auto& v : xh) n2 += v * v;
  std::vector<Dual1> mu(xh);
  mu.push_back(n2 + sigma * sigma / alpha * div);
  return {std::move(eta), std::move(mu)};
}

}  // namespace detail

/// Stats at every sample plus Jacobians at interior samples.
inline CurveEvaluation evaluate_with_jacobians(const DenoiserModel& model, const NoiseSchedule& schedule,
                                               const CubicSplineCurve& spline, const SplineBasis& basis,
                                               const TimeFloor& floor, const DivergenceConfig& div = {}) {
  CurveEvaluation ev;
  ev.curve = spline.discretize(basis, floor, &ev.dt_draw);
  ev.curve.validate(schedule);
  const std::size_t n = ev.curve.size();
  const std::size_t w = spline.dim() + 1;
  const bool exact = div.use_exact(model);
  ev.stats.resize(n);
  ev.jac_eta.assign(n, {});
  ev.jac_mu.assign(n, {});
  std::vector<Dual1> xd(spline.dim());
  for (std::size_t k = 0; k < n; ++k) {
    const auto& p = ev.curve.points[k];
    if (k == 0 || k + 1 == n) {
      ev.stats[k] = point_stats(model, schedule, p, div, k);
      continue;
    }
    detail::DivergenceTangent dv;
    std::vector<Vec> probes;
    dv.exact = exact;
    if (!exact && model.has_second_derivatives()) {
      const auto [np, kind] = div.probes_for(spline.dim());
      Rng rng = make_rng(div.seed, k);
      probes = divergence_probes(spline.dim(), np, kind, rng);
      dv.probes = &probes;
      dv.scale = probe_scale(spline.dim(), np, kind);
    } else if (!exact) {
      dv.frozen = denoiser_divergence(model, schedule, p, div, k);
    }
    Vec& je = ev.jac_eta[k];
    Vec& jm = ev.jac_mu[k];
    je.assign(w * w, 0.0);
    jm.assign(w * w, 0.0);
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t i = 0; i < spline.dim(); ++i) xd[i] = Dual1(p.x[i], i == c ? 1.0 : 0.0);
      const Dual1 td(p.t, c == spline.dim() ? 1.0 : 0.0);
      const auto [eta, mu] = detail::dual_stats(model, schedule, xd, td, dv);
      if (c == 0) {
        ev.stats[k].eta.resize(w);
        ev.stats[k].mu.resize(w);
        for (std::size_t r = 0; r < w; ++r) {
          ev.stats[k].eta[r] = eta[r].v;
          ev.stats[k].mu[r] = mu[r].v;
        }
      }
      for (std::size_t r = 0; r < w; ++r) {
        je[r * w + c] = eta[r].d;
        jm[r * w + c] = mu[r].d;
      }
    }
  }
  return ev;
}

/// Adds weight * dE/d(eta, mu) of the discrete energy to `adj`; returns E.
inline double energy_adjoint(const CurveEvaluation& ev, CurveAdjoint& adj, double weight = 1.0) {
  const auto& st = ev.stats;
  const std::size_t n = st.size();
  const double c = 0.5 * static_cast<double>(n - 1) * weight;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < st[k].eta.size(); ++i) {
      double ge = 0.0, gm = 0.0;
      if (k > 0) {
        ge += st[k].mu[i] - st[k - 1].mu[i];
        gm += st[k].eta[i] - st[k - 1].eta[i];
      }
      if (k + 1 < n) {
        ge -= st[k + 1].mu[i] - st[k].mu[i];
        gm -= st[k + 1].eta[i] - st[k].eta[i];
      }
      adj.eta[k][i] += c * ge;
      adj.mu[k][i] += c * gm;
    }
  }
  return energy_from_stats(st);
}

/// Pulls a curve adjoint back to the free control coordinates (flattened like CubicSplineCurve::flat).
inline Vec node_gradient(const CurveEvaluation& ev, const CurveAdjoint& adj, const SplineBasis& basis) {
  const std::size_t n = ev.curve.size();
  const std::size_t w = ev.curve.dim() + 1;
  const std::size_t n_free = basis.cols() - 2;
  Vec grad(n_free * w, 0.0);
  Vec gz(w);
  for (std::size_t k = 1; k + 1 < n; ++k) {
    for (std::size_t c = 0; c < w; ++c) {
      double g = adj.z[k][c];
      for (std::size_t r = 0; r < w; ++r) {
        g += adj.eta[k][r] * ev.jac_eta[k][r * w + c] + adj.mu[k][r] * ev.jac_mu[k][r * w + c];
      }
      gz[c] = g;
    }
    gz[w - 1] *= ev.dt_draw[k];
    for (std::size_t j = 1; j + 1 < basis.cols(); ++j) {
      const double b = basis(k, j);
      if (b == 0.0) continue;
      for (std::size_t c = 0; c < w; ++c) grad[(j - 1) * w + c] += b * gz[c];
    }
  }
  return grad;
}

inline TimeFloor make_floor(const NoiseSchedule& schedule, const CubicSplineCurve& spline,
                            const OptimizerConfig& cfg) {
  const double t_min = cfg.t_min > 0 ? cfg.t_min : std::min(spline.endpoint0().t, spline.endpoint1().t);
  return {cfg.t_floor_mode, t_min, schedule.T, cfg.floor_sharpness};
}

/// Discretized curve as the optimizer sees it (floor applied).
inline DiscretizedCurve sample_curve(const NoiseSchedule& schedule, const CubicSplineCurve& spline,
                                     const OptimizerConfig& cfg) {
  return spline.discretize(cfg.n_gamma, make_floor(schedule, spline, cfg));
}

/// (etas, mus) at s_n = n/(N_gamma-1).
inline std::pair<std::vector<Vec>, std::vector<Vec>> evaluate_curve(const DenoiserModel& model,
                                                                    const NoiseSchedule& schedule,
                                                                    const CubicSplineCurve& spline,
                                                                    const OptimizerConfig& cfg) {
  const auto curve = sample_curve(schedule, spline, cfg);
  const auto t_min = make_floor(schedule, spline, cfg).t_min;
  for (const auto& p : curve.points) {
    if (p.t < t_min) throw NumericalError("evaluate_curve: time below t_min after flooring");
  }
  const auto stats = curve_stats(model, schedule, curve, cfg.divergence);
  std::vector<Vec> etas, mus;
  for (const auto& s : stats) {
    etas.push_back(s.eta);
    mus.push_back(s.mu);
  }
  return {std::move(etas), std::move(mus)};
}

struct EnergyGradient {
  double energy = 0.0;
  Vec gradient;  // over the free control coordinates
};

inline EnergyGradient energy_gradient(const DenoiserModel& model, const NoiseSchedule& schedule,
                                      const CubicSplineCurve& spline, const OptimizerConfig& cfg) {
  const SplineBasis basis(spline.spline_kind(), spline.n_controls(), cfg.n_gamma);
  const auto ev = evaluate_with_jacobians(model, schedule, spline, basis, make_floor(schedule, spline, cfg),
                                          cfg.divergence);
  CurveAdjoint adj(ev.curve.size(), spline.dim() + 1);
  EnergyGradient out;
  out.energy = energy_adjoint(ev, adj);
  out.gradient = node_gradient(ev, adj, basis);
  return out;
}

/// An additional objective term weighted by a step-dependent lambda.
struct CurveTerm {
  std::string name;
  std::function<double(int step)> weight;
  /// Returns the raw term value and adds weight * its adjoint.
  std::function<double(const CurveEvaluation&, double weight, CurveAdjoint&)> evaluate;
};

struct GeodesicResult {
  CubicSplineCurve curve;
  std::vector<int> trace_steps;
  Vec energy_trace;
  std::vector<Vec> term_traces;  // one per CurveTerm, aligned with trace_steps
  double initial_energy = 0.0;
  double final_energy = 0.0;
  Vec final_terms;
};

/// Adam on E(gamma) + sum_i lambda_i(step) h_i(gamma).
inline GeodesicResult optimize_objective(const DenoiserModel& model, const NoiseSchedule& schedule,
                                         CubicSplineCurve spline, const OptimizerConfig& cfg,
                                         const std::vector<CurveTerm>& terms = {}) {
  cfg.validate();
  if (spline.dim() != model.dim()) throw DomainError("optimize: endpoint dimension does not match the model");
  const SplineBasis basis(spline.spline_kind(), spline.n_controls(), cfg.n_gamma);
  const TimeFloor floor = make_floor(schedule, spline, cfg);
  AdamConfig ac;
  ac.kind = cfg.optimizer;
  ac.learning_rate = cfg.learning_rate;
  ac.weight_decay = cfg.optimizer == OptimizerKind::adamw ? cfg.weight_decay : 0.0;
  Vec params = spline.flat();
  Adam opt(params.size(), ac);

  GeodesicResult res;
  res.term_traces.assign(terms.size(), {});
  const std::size_t w = spline.dim() + 1;

  auto evaluate = [&](int step, Vec* grad, Vec* term_values) {
    const auto ev = evaluate_with_jacobians(model, schedule, spline, basis, floor, cfg.divergence);
    CurveAdjoint adj(ev.curve.size(), w);
    const double e = energy_adjoint(ev, adj);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const double lam = terms[i].weight ? terms[i].weight(step) : 1.0;
      if (lam < 0) throw DomainError("penalty weight must be >= 0 (" + terms[i].name + ")");
      CurveAdjoint scratch(ev.curve.size(), w);
      const double h = terms[i].evaluate(ev, lam, lam != 0.0 ? adj : scratch);
      (*term_values)[i] = h;
    }
    if (grad) *grad = node_gradient(ev, adj, basis);
    return e;
  };

  Vec grad, tv(terms.size());
  for (int step = 0; step <= cfg.steps; ++step) {
    const bool last = step == cfg.steps;
    const double e = evaluate(step, last ? nullptr : &grad, &tv);
    bool finite = std::isfinite(e);
    for (double g : grad) finite = finite && std::isfinite(g);
    if (!finite) {
      std::ostringstream os;
      os << "geodesic optimization: non-finite energy or gradient at iteration " << step;
      throw NumericalError(os.str());
    }
    if (step == 0) res.initial_energy = e;
    if (step % cfg.record_every == 0 || last) {
      res.trace_steps.push_back(step);
      res.energy_trace.push_back(e);
      for (std::size_t i = 0; i < terms.size(); ++i) res.term_traces[i].push_back(tv[i]);
    }
    if (last) {
      res.final_energy = e;
      res.final_terms = tv;
      break;
    }
    opt.step(params, grad);
    spline.set_flat(params);
  }
  res.curve = std::move(spline);
  return res;
}

/// Default peak time of the initial curve: log SNR = -2, clipped to the schedule.
inline double default_t_peak(const NoiseSchedule& schedule) {
  double lam = -2.0;
  if (schedule.kind == ScheduleKind::vp_logsnr_linear) {
    lam = std::clamp(lam, schedule.lambda_min, schedule.lambda_max - 1e-9);
  } else {
    lam = std::max(lam, -2.0 * std::log(schedule.T));
  }
  return schedule.t_of_logsnr(lam);
}

inline CubicSplineCurve initial_curve(const NoiseSchedule& schedule, const SpacetimePoint& a,
                                      const SpacetimePoint& b, const OptimizerConfig& cfg) {
  const double t_peak = cfg.t_peak ? *cfg.t_peak : default_t_peak(schedule);
  const std::size_t k = cfg.parametrization == Parametrization::points ? cfg.n_gamma - 2 : cfg.nodes;
  return CubicSplineCurve::initial(a, b, k, t_peak, cfg.parametrization);
}

inline GeodesicResult optimize_geodesic(const DenoiserModel& model, const NoiseSchedule& schedule,
                                        const SpacetimePoint& a, const SpacetimePoint& b,
                                        const OptimizerConfig& cfg) {
  return optimize_objective(model, schedule, initial_curve(schedule, a, b, cfg), cfg);
}

/// Embeds data points at (x, t_min).
inline GeodesicResult optimize_geodesic(const DenoiserModel& model, const NoiseSchedule& schedule, const Vec& x_a,
                                        const Vec& x_b, const OptimizerConfig& cfg) {
  if (!(cfg.t_min > 0)) throw DomainError("optimize_geodesic: t_min must be > 0 to embed data points");
  return optimize_geodesic(model, schedule, SpacetimePoint{x_a, cfg.t_min}, SpacetimePoint{x_b, cfg.t_min}, cfg);
}

}  // namespace stgeo
