#pragma once

// Isotropic Gaussian mixture data q = sum_i pi_i N(m_i, s^2 I). All marginals
// and denoising posteriors are again mixtures, so score, denoiser and the
// posterior moments are closed form.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "stgeo/models/denoiser.hpp"

namespace stgeo {

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Vec> means;
  double variance = 1.0;

  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
  std::size_t size() const { return weights.size(); }

  void validate() const {
    if (weights.empty() || weights.size() != means.size()) {
      throw DomainError("GaussianMixture: weights and means must be non-empty and equally sized");
    }
    if (!(variance > 0) || !std::isfinite(variance)) throw DomainError("GaussianMixture: variance must be > 0");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0)) throw DomainError("GaussianMixture: negative weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw DomainError("GaussianMixture: weights must sum to 1");
    for (const auto& m : means) {
      if (m.size() != dim() || m.empty()) throw DomainError("GaussianMixture: inconsistent mean dimensions");
    }
  }

  /// Three-component 1D mixture used for the geodesic, DiffED and PF-ODE toys.
  static GaussianMixture paper_1d() {
    return {{0.275, 0.45, 0.275}, {{-2.5}, {0.5}, {2.5}}, 0.75 * 0.75};
  }

  /// Three-component 2D mixture: two wells on the x axis and a third above.
  static GaussianMixture toy_2d() {
    return {{0.4, 0.4, 0.2}, {{-2.0, 0.0}, {2.0, 0.0}, {0.0, 2.5}}, 0.6 * 0.6};
  }

  static GaussianMixture single(Vec mean, double variance) { return {{1.0}, {std::move(mean)}, variance}; }

  Vec sample(Rng& rng, NormalSampler& normal) const {
    const double u = NormalSampler::uniform01(rng);
    std::size_t k = 0;
    double acc = weights[0];
    while (u > acc && k + 1 < weights.size()) acc += weights[++k];
    Vec x(dim());
    const double s = std::sqrt(variance);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = means[k][i] + s * normal(rng);
    return x;
  }
};

/// Per-component quantities of p(x0 | x_t) for a mixture prior.
template <class S>
struct MixturePosterior {
  std::vector<S> resp;                 // posterior component weights
  std::vector<std::vector<S>> means;   // component posterior means
  S comp_var;                          // shared component posterior variance
  S marginal_var;                      // alpha^2 s^2 + sigma^2
  S log_marginal;                      // log p_t(x_t)
};

template <class S>
MixturePosterior<S> mixture_posterior(const GaussianMixture& q, const NoiseSchedule& schedule,
                                      std::span<const S> x, const S& t) {
  using fn::log;
  using fn::exp;
  const std::size_t d = q.dim();
  if (x.size() != d) throw DomainError("mixture_posterior: dimension mismatch");
  const auto [alpha, sigma] = schedule.alpha_sigma(t);
  const S s2 = S(q.variance);
  const S sig2 = sigma * sigma;
  const S v = alpha * alpha * s2 + sig2;

  MixturePosterior<S> post;
  post.marginal_var = v;
  post.comp_var = s2 * sig2 / v;
  const std::size_t k = q.size();
  std::vector<S> logw(k);
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    S r2(0.0);
    for (std::size_t i = 0; i < d; ++i) {
      const S diff = x[i] - alpha * q.means[c][i];
      r2 += diff * diff;
    }
    logw[c] = std::log(std::max(q.weights[c], 1e-300)) - 0.5 * r2 / v;
    if (q.weights[c] <= 0.0) logw[c] = S(-std::numeric_limits<double>::infinity());
    max_log = std::max(max_log, value_of(logw[c]));
  }
  S total(0.0);
  post.resp.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    post.resp[c] = q.weights[c] > 0.0 ? exp(logw[c] - max_log) : S(0.0);
    total += post.resp[c];
  }
  for (auto& r : post.resp) r = r / total;
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  post.log_marginal = max_log + log(total) - 0.5 * static_cast<double>(d) * (kLog2Pi + log(v));

  post.means.assign(k, std::vector<S>(d));
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < d; ++i) {
      post.means[c][i] = (sig2 * q.means[c][i] + alpha * s2 * x[i]) / v;
    }
  }
  return post;
}

template <class S>
S gmm_log_density(const GaussianMixture& q, const NoiseSchedule& schedule, std::span<const S> x, const S& t) {
  return mixture_posterior(q, schedule, x, t).log_marginal;
}

/// grad_x log p_t(x) for the mixture marginal.
template <class S>
std::vector<S> gmm_score(const GaussianMixture& q, const NoiseSchedule& schedule, std::span<const S> x,
                         const S& t) {
  const auto post = mixture_posterior(q, schedule, x, t);
  const auto [alpha, sigma] = schedule.alpha_sigma(t);
  (void)sigma;
  std::vector<S> g(x.size(), S(0.0));
  for (std::size_t c = 0; c < q.size(); ++c) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      g[i] -= post.resp[c] * (x[i] - alpha * q.means[c][i]) / post.marginal_var;
    }
  }
  return g;
}

inline Vec gmm_score(const GaussianMixture& q, const NoiseSchedule& schedule, const Vec& x, double t) {
  return gmm_score<double>(q, schedule, std::span<const double>(x), t);
}

/// Posterior moments (E[x0|x_t], E[|x0|^2 | x_t]).
template <class S>
std::pair<std::vector<S>, S> gmm_posterior_moments(const GaussianMixture& q, const NoiseSchedule& schedule,
                                                   std::span<const S> x, const S& t) {
  const auto post = mixture_posterior(q, schedule, x, t);
  const std::size_t d = x.size();
  std::vector<S> mean(d, S(0.0));
  S second = static_cast<double>(d) * post.comp_var;
  for (std::size_t c = 0; c < q.size(); ++c) {
    S norm2(0.0);
    for (std::size_t i = 0; i < d; ++i) {
      mean[i] += post.resp[c] * post.means[c][i];
      norm2 += post.means[c][i] * post.means[c][i];
    }
    second += post.resp[c] * norm2;
  }
  return {std::move(mean), second};
}

class GmmDenoiser final : public AnalyticDenoiser<GmmDenoiser> {
 public:
  explicit GmmDenoiser(GaussianMixture mixture) : q_(std::move(mixture)) { q_.validate(); }

  std::size_t dim() const override { return q_.dim(); }
  std::string name() const override { return "gmm"; }
  const GaussianMixture& mixture() const { return q_; }

  template <class S>
  std::vector<S> denoise_impl(const NoiseSchedule& schedule, std::span<const S> x, const S& t) const {
    return gmm_posterior_moments(q_, schedule, x, t).first;
  }

  /// div_x E[x0|x_t] = (alpha_t / sigma_t^2) tr Cov[x0|x_t].
  template <class S>
  S divergence_impl(const NoiseSchedule& schedule, std::span<const S> x, const S& t) const {
    const auto post = mixture_posterior(q_, schedule, x, t);
    const std::size_t d = x.size();
    std::vector<S> mean(d, S(0.0));
    for (std::size_t c = 0; c < q_.size(); ++c) {
      for (std::size_t i = 0; i < d; ++i) mean[i] += post.resp[c] * post.means[c][i];
    }
    // Spread form of the trace avoids cancellation in E|x0|^2 - |E x0|^2.
    S trace_cov = static_cast<double>(d) * post.comp_var;
    for (std::size_t c = 0; c < q_.size(); ++c) {
      S spread(0.0);
      for (std::size_t i = 0; i < d; ++i) {
        const S diff = post.means[c][i] - mean[i];
        spread += diff * diff;
      }
      trace_cov += post.resp[c] * spread;
    }
    const auto [alpha, sigma] = schedule.alpha_sigma(t);
    return alpha / (sigma * sigma) * trace_cov;
  }

 private:
  GaussianMixture q_;
};

}  // namespace stgeo
