#pragma once

// Reference values computed without the library's geometry code: closed-form
// posteriors of Gaussian data, the Fisher–Rao metric of the isotropic Gaussian
// family, Gaussian KL divergences, importance sampling and finite differences.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

/// Variance-preserving log-SNR-linear schedule, written out directly.
struct VpSchedule {
  double lambda_min = -10, lambda_max = 10, T = 1;
  double lambda(double t) const { return lambda_max + (lambda_min - lambda_max) * t / T; }
  double alpha2(double t) const { return 1.0 / (1.0 + std::exp(-lambda(t))); }
  double sigma2(double t) const { return 1.0 / (1.0 + std::exp(lambda(t))); }
};

/// Posterior N(m, v I) of x0 ~ N(mean, s2 I) given x_t = a x0 + sqrt(sig2) eps.
struct GaussPosterior {
  Vec m;
  double v;
};

inline GaussPosterior gaussian_posterior(const Vec& mean, double s2, const Vec& x, double a, double sig2) {
  // Precision form: 1/v = 1/s2 + a^2/sig2, m = v (mean/s2 + a x/sig2).
  const double prec = 1.0 / s2 + a * a / sig2;
  GaussPosterior p{Vec(x.size()), 1.0 / prec};
  for (std::size_t i = 0; i < x.size(); ++i) p.m[i] = p.v * (mean[i] / s2 + a * x[i] / sig2);
  return p;
}

/// KL(N(m1, v1 I) ‖ N(m2, v2 I)).
inline double gaussian_kl(const GaussPosterior& p, const GaussPosterior& q) {
  const double d = static_cast<double>(p.m.size());
  double r2 = 0.0;
  for (std::size_t i = 0; i < p.m.size(); ++i) r2 += (p.m[i] - q.m[i]) * (p.m[i] - q.m[i]);
  return 0.5 * (d * p.v / q.v + r2 / q.v - d + d * std::log(q.v / p.v));
}

/// Fisher–Rao energy ½∫ (|m'|²/v + D v'²/(2v²)) du of a posterior path u -> N(m(u), v(u) I),
/// with derivatives by 4th-order central differences and composite Simpson quadrature.
inline double fisher_rao_energy(const std::function<GaussPosterior(double)>& path, int intervals = 2000) {
  const double h = 1e-4;
  auto speed2 = [&](double u) {
    const double lo = std::max(0.0, u - 2 * h), hi = std::min(1.0, u + 2 * h);
    const double c = 0.5 * (lo + hi);
    const double e = 0.25 * (hi - lo);
    const auto p2 = path(c + 2 * e), p1 = path(c + e), q1 = path(c - e), q2 = path(c - 2 * e);
    const auto p0 = path(u);
    const double d = static_cast<double>(p0.m.size());
    double dm2 = 0.0;
    for (std::size_t i = 0; i < p0.m.size(); ++i) {
      const double dm = (-p2.m[i] + 8 * p1.m[i] - 8 * q1.m[i] + q2.m[i]) / (12 * e);
      dm2 += dm * dm;
    }
    const double dv = (-p2.v + 8 * p1.v - 8 * q1.v + q2.v) / (12 * e);
    return dm2 / p0.v + d * dv * dv / (2 * p0.v * p0.v);
  };
  double acc = speed2(0.0) + speed2(1.0);
  for (int k = 1; k < intervals; ++k) acc += (k % 2 ? 4.0 : 2.0) * speed2(static_cast<double>(k) / intervals);
  return 0.5 * acc / (3.0 * intervals);
}

/// Fisher–Rao length ∫ sqrt(|m'|²/v + D v'²/(2v²)) du of the same kind of path (midpoint rule
/// on small chords, each measured with the metric at the chord midpoint).
inline double fisher_rao_length(const std::function<GaussPosterior(double)>& path, int intervals = 20000) {
  double len = 0.0;
  for (int k = 0; k < intervals; ++k) {
    const double u0 = static_cast<double>(k) / intervals, u1 = static_cast<double>(k + 1) / intervals;
    const auto p0 = path(u0), p1 = path(u1), pm = path(0.5 * (u0 + u1));
    const double d = static_cast<double>(pm.m.size());
    double dm2 = 0.0;
    for (std::size_t i = 0; i < pm.m.size(); ++i) dm2 += (p1.m[i] - p0.m[i]) * (p1.m[i] - p0.m[i]);
    const double dv = p1.v - p0.v;
    len += std::sqrt(dm2 / pm.v + d * dv * dv / (2 * pm.v * pm.v));
  }
  return len;
}

/// Central-difference derivative.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

/// Self-normalized importance sampling of E[f(x0) | x_t] with x0 drawn from the prior.
struct IsEstimate {
  double mean;
  double std_error;
};

inline IsEstimate importance_sample(const std::function<Vec(std::mt19937_64&)>& prior_draw,
                                    const std::function<double(const Vec&)>& log_lik,
                                    const std::function<double(const Vec&)>& f, int samples,
                                    std::mt19937_64& rng) {
  std::vector<double> lw(samples), fv(samples);
  double mx = -INFINITY;
  for (int i = 0; i < samples; ++i) {
    const Vec x0 = prior_draw(rng);
    lw[i] = log_lik(x0);
    fv[i] = f(x0);
    mx = std::max(mx, lw[i]);
  }
  double sw = 0.0, swf = 0.0;
  for (int i = 0; i < samples; ++i) {
    lw[i] = std::exp(lw[i] - mx);
    sw += lw[i];
    swf += lw[i] * fv[i];
  }
  const double est = swf / sw;
  double var = 0.0;  // delta-method variance of the ratio estimator
  for (int i = 0; i < samples; ++i) var += lw[i] * lw[i] * (fv[i] - est) * (fv[i] - est);
  return {est, std::sqrt(var) / sw};
}

}  // namespace oracle
