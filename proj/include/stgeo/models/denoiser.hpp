#pragma once

// Abstract denoiser x_hat0(x_t, t) ~ E[x0 | x_t], plus the generic machinery
// built on it: Jacobian-vector products, Hutchinson divergence and Tweedie's
// formula.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stgeo/dual.hpp"
#include "stgeo/errors.hpp"
#include "stgeo/rng.hpp"
#include "stgeo/schedule.hpp"

namespace stgeo {

using Vec = std::vector<double>;

/// Evaluated for double (values) and Dual1 (one forward tangent through x and t).
class DenoiserModel {
 public:
  virtual ~DenoiserModel() = default;

  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;

  virtual Vec denoise(const NoiseSchedule& schedule, std::span<const double> x, double t) const = 0;
  virtual std::vector<Dual1> denoise(const NoiseSchedule& schedule, std::span<const Dual1> x,
                                     Dual1 t) const = 0;

  /// Analytic backends know div_x E[x0|x_t] in closed form (and its derivatives).
  virtual bool has_exact_divergence() const { return false; }

  virtual double divergence(const NoiseSchedule&, std::span<const double>, double) const {
    throw CapabilityError(name() + ": no closed-form divergence; use hutchinson_divergence");
  }
  virtual Dual1 divergence(const NoiseSchedule&, std::span<const Dual1>, Dual1) const {
    throw CapabilityError(name() + ": no closed-form divergence; use hutchinson_divergence");
  }

  /// Nested forward mode (two tangents), used for the tangent of a probed divergence.
  virtual bool has_second_derivatives() const { return false; }
  virtual std::vector<Dual2> denoise2(const NoiseSchedule&, std::span<const Dual2>, Dual2) const {
    throw CapabilityError(name() + ": no second directional derivatives");
  }

  /// Denoiser and closed-form divergence in one pass (analytic backends only).
  virtual std::pair<Vec, double> denoise_with_divergence(const NoiseSchedule& schedule,
                                                         std::span<const double> x, double t) const {
    return {denoise(schedule, x, t), divergence(schedule, x, t)};
  }
  virtual std::pair<std::vector<Dual1>, Dual1> denoise_with_divergence(const NoiseSchedule& schedule,
                                                                       std::span<const Dual1> x,
                                                                       Dual1 t) const {
    return {denoise(schedule, x, t), divergence(schedule, x, t)};
  }
};

template <class D, class S>
concept FusedDivergence = requires(const D& d, const NoiseSchedule& s, std::span<const S> x, const S& t) {
  d.template denoise_with_divergence_impl<S>(s, x, t);
};

/// Implements the virtual surface of DenoiserModel from the templates
/// `Derived::denoise_impl<S>` and `Derived::divergence_impl<S>`.
template <class Derived>
class AnalyticDenoiser : public DenoiserModel {
 public:
  Vec denoise(const NoiseSchedule& schedule, std::span<const double> x, double t) const override {
    return self().template denoise_impl<double>(schedule, x, t);
  }
  std::vector<Dual1> denoise(const NoiseSchedule& schedule, std::span<const Dual1> x,
                             Dual1 t) const override {
    return self().template denoise_impl<Dual1>(schedule, x, t);
  }
  bool has_exact_divergence() const override { return true; }
  double divergence(const NoiseSchedule& schedule, std::span<const double> x, double t) const override {
    return self().template divergence_impl<double>(schedule, x, t);
  }
  Dual1 divergence(const NoiseSchedule& schedule, std::span<const Dual1> x, Dual1 t) const override {
    return self().template divergence_impl<Dual1>(schedule, x, t);
  }
  std::pair<Vec, double> denoise_with_divergence(const NoiseSchedule& schedule, std::span<const double> x,
                                                 double t) const override {
    return fused<double>(schedule, x, t);
  }
  std::pair<std::vector<Dual1>, Dual1> denoise_with_divergence(const NoiseSchedule& schedule,
                                                               std::span<const Dual1> x,
                                                               Dual1 t) const override {
    return fused<Dual1>(schedule, x, t);
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }

  template <class S>
  std::pair<std::vector<S>, S> fused(const NoiseSchedule& schedule, std::span<const S> x, const S& t) const {
    if constexpr (FusedDivergence<Derived, S>) {
      return self().template denoise_with_divergence_impl<S>(schedule, x, t);
    } else {
      return {self().template denoise_impl<S>(schedule, x, t), self().template divergence_impl<S>(schedule, x, t)};
    }
  }
};

/// Linear map x -> A x (time independent). Used as a reference backend.
class LinearDenoiser final : public AnalyticDenoiser<LinearDenoiser> {
 public:
  /// `matrix` is row-major, dim x dim.
  LinearDenoiser(std::size_t dim, Vec matrix) : dim_(dim), a_(std::move(matrix)) {
    if (a_.size() != dim_ * dim_) throw DomainError("LinearDenoiser: matrix size mismatch");
  }
  static LinearDenoiser identity(std::size_t dim) {
    Vec a(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) a[i * dim + i] = 1.0;
    return LinearDenoiser(dim, std::move(a));
  }

  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "linear"; }

  template <class S>
  std::vector<S> denoise_impl(const NoiseSchedule&, std::span<const S> x, const S&) const {
    std::vector<S> out(dim_, S(0.0));
    for (std::size_t i = 0; i < dim_; ++i) {
      for (std::size_t j = 0; j < dim_; ++j) out[i] += a_[i * dim_ + j] * x[j];
    }
    return out;
  }
  template <class S>
  S divergence_impl(const NoiseSchedule&, std::span<const S>, const S&) const {
    double tr = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) tr += a_[i * dim_ + i];
    return S(tr);
  }

 private:
  std::size_t dim_;
  Vec a_;
};

/// (x_hat0, d x_hat0 along (dx, dt)).
inline std::pair<Vec, Vec> denoise_jvp(const DenoiserModel& model, const NoiseSchedule& schedule,
                                       std::span<const double> x, double t, std::span<const double> dx,
                                       double dt = 0.0) {
  std::vector<Dual1> xd(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xd[i] = Dual1(x[i], dx[i]);
  const auto out = model.denoise(schedule, std::span<const Dual1>(xd), Dual1(t, dt));
  Vec value(out.size()), tangent(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    value[i] = out[i].v;
    tangent[i] = out[i].d;
  }
  return {std::move(value), std::move(tangent)};
}

enum class ProbeKind { rademacher, basis };

/// Probe directions in the order hutchinson_divergence draws them. Basis probes
/// cycle through the coordinates and consume no randomness.
inline std::vector<Vec> divergence_probes(std::size_t dim, int probes, ProbeKind kind, Rng& rng) {
  if (probes < 1) throw DomainError("hutchinson_divergence: probes must be >= 1");
  std::vector<Vec> out(static_cast<std::size_t>(probes), Vec(dim, 0.0));
  for (int p = 0; p < probes; ++p) {
    auto& v = out[static_cast<std::size_t>(p)];
    if (kind == ProbeKind::basis) {
      v[static_cast<std::size_t>(p) % dim] = 1.0;
    } else {
      for (auto& vi : v) vi = rademacher(rng);
    }
  }
  return out;
}

/// Turns sum_p v^T J v into the trace estimate: a partial or repeated basis
/// cycle is rescaled to the full trace, Rademacher probes are averaged.
inline double probe_scale(std::size_t dim, int probes, ProbeKind kind) {
  return kind == ProbeKind::basis ? static_cast<double>(dim) / probes : 1.0 / probes;
}

/// Trace of the denoiser Jacobian from directional derivatives:
/// mean over probes v of v^T (J v). Basis probes with probes == dim is exact.
inline double hutchinson_divergence(const DenoiserModel& model, const NoiseSchedule& schedule,
                                    std::span<const double> x, double t, int probes, ProbeKind kind,
                                    Rng& rng) {
  const std::size_t d = x.size();
  double acc = 0.0;
  for (const auto& v : divergence_probes(d, probes, kind, rng)) {
    const auto jv = denoise_jvp(model, schedule, x, t, v).second;
    for (std::size_t i = 0; i < d; ++i) acc += v[i] * jv[i];
  }
  return acc * probe_scale(d, probes, kind);
}

/// The same estimate with fixed probes, carrying its derivative along the
/// tangent of (x, t). Needs has_second_derivatives().
inline Dual1 hutchinson_divergence_tangent(const DenoiserModel& model, const NoiseSchedule& schedule,
                                           std::span<const Dual1> x, Dual1 t, const std::vector<Vec>& probes,
                                           double scale) {
  const std::size_t d = x.size();
  std::vector<Dual2> x2(d);
  const Dual2 t2(t, Dual1(0.0));
  Dual1 acc(0.0);
  for (const auto& v : probes) {
    for (std::size_t i = 0; i < d; ++i) x2[i] = Dual2(x[i], Dual1(v[i]));
    const auto out = model.denoise2(schedule, x2, t2);
    for (std::size_t i = 0; i < d; ++i) acc += v[i] * out[i].d;
  }
  return acc * scale;
}

/// Tweedie's formula: E[x0|x_t] = (x_t + sigma_t^2 score) / alpha_t.
template <class S>
std::vector<S> denoise_from_score(std::span<const S> score, const NoiseSchedule& schedule,
                                  std::span<const S> x, const S& t) {
  const auto [alpha, sigma] = schedule.alpha_sigma(t);
  std::vector<S> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] + sigma * sigma * score[i]) / alpha;
  return out;
}

/// Inverse Tweedie: score = (alpha_t x_hat0 - x_t) / sigma_t^2.
inline Vec score_from_denoiser(const DenoiserModel& model, const NoiseSchedule& schedule,
                               std::span<const double> x, double t) {
  const auto [alpha, sigma] = schedule.alpha_sigma(t);
  auto xh = model.denoise(schedule, x, t);
  for (std::size_t i = 0; i < x.size(); ++i) xh[i] = (alpha * xh[i] - x[i]) / (sigma * sigma);
  return xh;
}

}  // namespace stgeo
