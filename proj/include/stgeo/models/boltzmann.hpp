#pragma once

// Boltzmann data q(x) ∝ exp(-U(x)): toy potentials, an overdamped Langevin
// sampler, and a denoiser whose posterior moments come from quadrature of
// p(x0 | x_t) ∝ exp(-U(x0) - SNR/2 |x0 - x_t/alpha|^2) on a grid.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "stgeo/models/denoiser.hpp"
#include "stgeo/models/gmm.hpp"

namespace stgeo {

struct BoltzmannPotential {
  std::string name;
  std::size_t dim = 0;
  std::function<double(std::span<const double>)> energy;
  std::function<void(std::span<const double>, std::span<double>)> gradient;
  // Optional additive split U(x) = sum_i u_i(x_i); lets the denoiser factorize.
  std::vector<std::function<double(double)>> separable;

  Vec grad(std::span<const double> x) const {
    Vec g(dim);
    gradient(x, g);
    return g;
  }

  /// U(x, y) = (x^2 - 1)^2 + 2 y^2: minima at (+-1, 0), saddle U = 1 at the origin.
  static BoltzmannPotential double_well() {
    BoltzmannPotential p;
    p.name = "double_well";
    p.dim = 2;
    p.energy = [](std::span<const double> x) {
      const double a = x[0] * x[0] - 1.0;
      return a * a + 2.0 * x[1] * x[1];
    };
    p.gradient = [](std::span<const double> x, std::span<double> g) {
      g[0] = 4.0 * x[0] * (x[0] * x[0] - 1.0);
      g[1] = 4.0 * x[1];
    };
    p.separable = {[](double u) { return (u * u - 1.0) * (u * u - 1.0); }, [](double v) { return 2.0 * v * v; }};
    return p;
  }

  /// U = |x|^2 / 2.
  static BoltzmannPotential standard_gaussian(std::size_t dim) {
    BoltzmannPotential p;
    p.name = "gaussian";
    p.dim = dim;
    p.energy = [](std::span<const double> x) {
      double e = 0.0;
      for (double v : x) e += 0.5 * v * v;
      return e;
    };
    p.gradient = [](std::span<const double> x, std::span<double> g) {
      for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i];
    };
    p.separable.assign(dim, [](double v) { return 0.5 * v * v; });
    return p;
  }

  /// U = -log q for a Gaussian mixture (normalizing constant dropped).
  static BoltzmannPotential mixture(GaussianMixture q) {
    q.validate();
    BoltzmannPotential p;
    p.name = "gmm";
    p.dim = q.dim();
    auto terms = [q](std::span<const double> x, std::span<double> g) {
      const std::size_t k = q.size();
      std::vector<double> logw(k);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        double r2 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) r2 += (x[i] - q.means[c][i]) * (x[i] - q.means[c][i]);
        logw[c] = q.weights[c] > 0 ? std::log(q.weights[c]) - 0.5 * r2 / q.variance
                                   : -std::numeric_limits<double>::infinity();
        mx = std::max(mx, logw[c]);
      }
      double total = 0.0;
      for (auto& w : logw) total += (w = std::exp(w - mx));
      if (!g.empty()) {
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t c = 0; c < k; ++c) {
          for (std::size_t i = 0; i < x.size(); ++i) g[i] += logw[c] / total * (x[i] - q.means[c][i]) / q.variance;
        }
      }
      return -(mx + std::log(total));
    };
    p.energy = [terms](std::span<const double> x) { return terms(x, {}); };
    p.gradient = [terms](std::span<const double> x, std::span<double> g) { terms(x, g); };
    return p;
  }
};

struct LangevinInit {
  Vec lo, hi;  // chains start uniformly in this box (lo == hi pins the start)
};

/// n independent chains of x <- x - grad U dt + sqrt(2 dt) eps; returns final states.
/// Chain c uses RNG stream c of `seed`, so results do not depend on `threads`.
inline std::vector<Vec> boltzmann_sample(const BoltzmannPotential& potential, std::size_t n, int steps, double dt,
                                         std::uint64_t seed, const LangevinInit& init, unsigned threads = 1) {
  if (steps < 1) throw DomainError("boltzmann_sample: steps must be >= 1");
  if (!(dt > 0)) throw DomainError("boltzmann_sample: dt must be > 0");
  const std::size_t d = potential.dim;
  if (init.lo.size() != d || init.hi.size() != d) throw DomainError("boltzmann_sample: init box dimension");

  std::vector<Vec> out(n, Vec(d));
  std::vector<std::string> failures(n);
  const double noise = std::sqrt(2.0 * dt);

  auto run = [&](std::size_t c) {
    Rng rng = make_rng(seed, c);
    NormalSampler normal;
    Vec& x = out[c];
    Vec g(d);
    for (std::size_t i = 0; i < d; ++i) x[i] = init.lo[i] + (init.hi[i] - init.lo[i]) * NormalSampler::uniform01(rng);
    for (int s = 0; s < steps; ++s) {
      potential.gradient(x, g);
      for (std::size_t i = 0; i < d; ++i) x[i] += -g[i] * dt + noise * normal(rng);
      for (std::size_t i = 0; i < d; ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(g[i])) {
          std::ostringstream os;
          os << "boltzmann_sample: non-finite state in chain " << c << " at step " << s;
          failures[c] = os.str();
          return;
        }
      }
    }
  };

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t c = 0; c < n; ++c) run(c);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < n; c += threads) run(c);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& f : failures) {
    if (!f.empty()) throw NumericalError(f);
  }
  return out;
}

/// Exact (to quadrature error) denoiser for Boltzmann data. Separable potentials
/// get one 1D grid per coordinate; others a full tensor grid (keep D small).
class QuadratureDenoiser final : public AnalyticDenoiser<QuadratureDenoiser> {
 public:
  QuadratureDenoiser(const BoltzmannPotential& potential, Vec lo, Vec hi, std::size_t nodes_per_axis)
      : dim_(potential.dim), name_(potential.name) {
    if (lo.size() != dim_ || hi.size() != dim_) throw DomainError("QuadratureDenoiser: box dimension mismatch");
    if (nodes_per_axis < 3) throw DomainError("QuadratureDenoiser: need >= 3 nodes per axis");
    auto axis = [&](std::size_t i) {
      Vec g(nodes_per_axis);
      for (std::size_t k = 0; k < nodes_per_axis; ++k) {
        g[k] = lo[i] + (hi[i] - lo[i]) * static_cast<double>(k) / static_cast<double>(nodes_per_axis - 1);
      }
      return g;
    };
    if (!potential.separable.empty()) {
      for (std::size_t i = 0; i < dim_; ++i) {
        Block b;
        b.coords = {i};
        for (double v : axis(i)) {
          b.points.push_back(v);
          b.log_prior.push_back(-potential.separable[i](v));
          b.norm2.push_back(v * v);
        }
        blocks_.push_back(std::move(b));
      }
    } else {
      Block b;
      for (std::size_t i = 0; i < dim_; ++i) b.coords.push_back(i);
      std::size_t total = 1;
      for (std::size_t i = 0; i < dim_; ++i) total *= nodes_per_axis;
      std::vector<Vec> axes;
      for (std::size_t i = 0; i < dim_; ++i) axes.push_back(axis(i));
      Vec p(dim_);
      for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t r = flat;
        double n2 = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
          p[i] = axes[i][r % nodes_per_axis];
          r /= nodes_per_axis;
          n2 += p[i] * p[i];
        }
        b.points.insert(b.points.end(), p.begin(), p.end());
        b.log_prior.push_back(-potential.energy(p));
        b.norm2.push_back(n2);
      }
      blocks_.push_back(std::move(b));
    }
  }

  /// Double-well on [-3, 3]^2 with 601 nodes per axis (spacing 0.01).
  static QuadratureDenoiser double_well() {
    return QuadratureDenoiser(BoltzmannPotential::double_well(), {-3.0, -3.0}, {3.0, 3.0}, 601);
  }

  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "quadrature:" + name_; }

  template <class S>
  std::vector<S> denoise_impl(const NoiseSchedule& schedule, std::span<const S> x, const S& t) const {
    return moments<S>(schedule, x, t).first;
  }
  template <class S>
  S divergence_impl(const NoiseSchedule& schedule, std::span<const S> x, const S& t) const {
    return denoise_with_divergence_impl<S>(schedule, x, t).second;
  }
  template <class S>
  std::pair<std::vector<S>, S> denoise_with_divergence_impl(const NoiseSchedule& schedule, std::span<const S> x,
                                                            const S& t) const {
    auto [mean, trace_cov] = moments<S>(schedule, x, t);
    const auto [alpha, sigma] = schedule.alpha_sigma(t);
    return {std::move(mean), alpha / (sigma * sigma) * trace_cov};
  }

 private:
  struct Block {
    std::vector<std::size_t> coords;
    Vec points;  // node-major, coords.size() per node
    Vec log_prior;
    Vec norm2;
  };

  /// (posterior mean, trace of posterior covariance).
  template <class S>
  std::pair<std::vector<S>, S> moments(const NoiseSchedule& schedule, std::span<const S> x, const S& t) const {
    using fn::exp;
    if (x.size() != dim_) throw DomainError("QuadratureDenoiser: dimension mismatch");
    const auto [alpha, sigma] = schedule.alpha_sigma(t);
    const S snr = alpha * alpha / (sigma * sigma);
    std::vector<S> mean(dim_, S(0.0));
    S trace_cov(0.0);
    std::vector<S> y;
    std::vector<S> logw;
    for (const auto& b : blocks_) {
      const std::size_t m = b.coords.size();
      const std::size_t nodes = b.log_prior.size();
      y.assign(m, S(0.0));
      for (std::size_t j = 0; j < m; ++j) y[j] = x[b.coords[j]] / alpha;
      // log w = -U(g) - snr/2 |g|^2 + snr g.y  (the |y|^2 term cancels on normalization)
      logw.resize(nodes);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < nodes; ++k) {
        S dot(0.0);
        for (std::size_t j = 0; j < m; ++j) dot += b.points[k * m + j] * y[j];
        logw[k] = b.log_prior[k] + snr * (dot - 0.5 * b.norm2[k]);
        mx = std::max(mx, value_of(logw[k]));
      }
      S total(0.0);
      std::vector<S> bm(m, S(0.0));
      for (std::size_t k = 0; k < nodes; ++k) {
        logw[k] = exp(logw[k] - mx);
        total += logw[k];
        for (std::size_t j = 0; j < m; ++j) bm[j] += logw[k] * b.points[k * m + j];
      }
      for (auto& v : bm) v = v / total;
      S spread(0.0);
      for (std::size_t k = 0; k < nodes; ++k) {
        S r2(0.0);
        for (std::size_t j = 0; j < m; ++j) {
          const S diff = b.points[k * m + j] - bm[j];
          r2 += diff * diff;
        }
        spread += logw[k] * r2;
      }
      trace_cov += spread / total;
      for (std::size_t j = 0; j < m; ++j) mean[b.coords[j]] = bm[j];
    }
    return {std::move(mean), trace_cov};
  }

  std::size_t dim_;
  std::string name_;
  std::vector<Block> blocks_;
};

}  // namespace stgeo
