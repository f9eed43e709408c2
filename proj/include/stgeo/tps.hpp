#pragma once

// Transition-path sampling: annealed Langevin dynamics on the denoising
// Boltzmann energies U(x0 | gamma_n) along a spacetime curve, plus MaxEnergy
// reporting and a grid lower bound on min_gamma max_s U(gamma_s).

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <thread>
#include <vector>

#include "stgeo/geometry.hpp"
#include "stgeo/models/boltzmann.hpp"

namespace stgeo {

/// U(x0 | z) = U(x0) + SNR(t)/2 |x0 - x/alpha|^2.
inline double denoising_energy(const BoltzmannPotential& potential, const NoiseSchedule& schedule,
                               std::span<const double> x0, const SpacetimePoint& z) {
  const auto [alpha, sigma] = schedule.alpha_sigma(z.t);
  const double snr = alpha * alpha / (sigma * sigma);
  double r2 = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) r2 += (x0[i] - z.x[i] / alpha) * (x0[i] - z.x[i] / alpha);
  return potential.energy(x0) + 0.5 * snr * r2;
}

/// grad_x0 U(x0 | z) = grad U(x0) + SNR(t) (x0 - x/alpha).
inline Vec denoising_energy_grad(const BoltzmannPotential& potential, const NoiseSchedule& schedule,
                                 std::span<const double> x0, const SpacetimePoint& z) {
  const auto [alpha, sigma] = schedule.alpha_sigma(z.t);
  const double snr = alpha * alpha / (sigma * sigma);
  Vec g = potential.grad(x0);
  for (std::size_t i = 0; i < x0.size(); ++i) g[i] += snr * (x0[i] - z.x[i] / alpha);
  return g;
}

struct TransitionChain {
  std::vector<Vec> states;                 // N_gamma * K + 1 (plus nothing for burn-in)
  std::vector<std::size_t> geodesic_index; // conditioning point of each state (0 for the start)
  std::uint64_t seed = 0;
  std::size_t n_energy_evals = 0;          // gradient evaluations of U
};

struct TpsConfig {
  int langevin_steps = 128;  // K per curve point
  double dt = 4e-4;
  std::size_t n_paths = 100;
  std::uint64_t seed = 0;
  int burn_in = 0;           // unrecorded steps at gamma_0 before annealing
  double noise_scale = 1.0;  // 0 turns the chain into gradient descent (test mode)
  unsigned threads = 1;
};

/// Algorithm: start every path at x_a = gamma_0.x; for each curve point take K
/// Langevin steps on U(. | gamma_n) and record every state. Path p uses RNG stream p.
inline std::vector<TransitionChain> sample_transition_paths(const BoltzmannPotential& potential,
                                                            const DiscretizedCurve& curve,
                                                            const NoiseSchedule& schedule, const TpsConfig& cfg) {
  curve.validate(schedule);
  if (cfg.langevin_steps < 1) throw DomainError("sample_transition_paths: K must be >= 1");
  if (!(cfg.dt > 0)) throw DomainError("sample_transition_paths: dt must be > 0");
  if (cfg.burn_in < 0) throw DomainError("sample_transition_paths: burn_in must be >= 0");
  if (curve.dim() != potential.dim) throw DomainError("sample_transition_paths: dimension mismatch");
  const std::size_t d = potential.dim;
  const std::size_t n_gamma = curve.size();
  const std::size_t k_steps = static_cast<std::size_t>(cfg.langevin_steps);

  // Per-point constants of the conditional energy.
  Vec snr(n_gamma);
  std::vector<Vec> centre(n_gamma, Vec(d));
  for (std::size_t n = 0; n < n_gamma; ++n) {
    const auto [alpha, sigma] = schedule.alpha_sigma(curve.points[n].t);
    snr[n] = alpha * alpha / (sigma * sigma);
    for (std::size_t i = 0; i < d; ++i) centre[n][i] = curve.points[n].x[i] / alpha;
  }

  std::vector<TransitionChain> paths(cfg.n_paths);
  std::vector<std::string> failures(cfg.n_paths);
  const double noise = cfg.noise_scale * std::sqrt(2.0 * cfg.dt);

  auto run = [&](std::size_t p) {
    TransitionChain& ch = paths[p];
    ch.seed = mix_seed(cfg.seed, p);
    Rng rng(ch.seed);
    NormalSampler normal;
    Vec x = curve.points.front().x;
    Vec g(d);
    ch.states.reserve(n_gamma * k_steps + 1);
    ch.geodesic_index.reserve(n_gamma * k_steps + 1);
    ch.states.push_back(x);
    ch.geodesic_index.push_back(0);
    auto step = [&](std::size_t n) {
      potential.gradient(x, g);
      for (std::size_t i = 0; i < d; ++i) {
        x[i] += -(g[i] + snr[n] * (x[i] - centre[n][i])) * cfg.dt + (noise != 0.0 ? noise * normal(rng) : 0.0);
      }
      ++ch.n_energy_evals;
      for (double v : x) {
        if (!std::isfinite(v)) return false;
      }
      return true;
    };
    for (int b = 0; b < cfg.burn_in; ++b) {
      if (!step(0)) {
        failures[p] = "non-finite state during burn-in";
        return;
      }
    }
    for (std::size_t n = 0; n < n_gamma; ++n) {
      for (std::size_t k = 0; k < k_steps; ++k) {
        if (!step(n)) {
          std::ostringstream os;
          os << "non-finite state at curve point " << n << ", Langevin step " << k;
          failures[p] = os.str();
          return;
        }
        ch.states.push_back(x);
        ch.geodesic_index.push_back(n);
      }
    }
  };

  const unsigned threads = std::max(1u, cfg.threads);
  if (threads == 1) {
    for (std::size_t p = 0; p < cfg.n_paths; ++p) run(p);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t p = w; p < cfg.n_paths; p += threads) run(p);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (std::size_t p = 0; p < cfg.n_paths; ++p) {
    if (!failures[p].empty()) {
      std::ostringstream os;
      os << "transition path " << p << ": " << failures[p];
      throw NumericalError(os.str());
    }
  }
  return paths;
}

struct PathReport {
  double max_energy = 0.0;
  std::size_t argmax_state = 0;
  std::size_t n_energy_evals = 0;
};

struct PathsSummary {
  std::vector<PathReport> paths;
  double max_energy_mean = 0.0;
  double max_energy_std = 0.0;  // sample standard deviation across paths
  std::size_t n_energy_evals = 0;  // per path (identical across paths)
  std::size_t total_energy_evals = 0;
};

inline PathsSummary report_paths(const BoltzmannPotential& potential, const std::vector<TransitionChain>& chains) {
  if (chains.empty()) throw DomainError("report_paths: no chains");
  PathsSummary s;
  for (const auto& ch : chains) {
    if (ch.states.empty()) throw DomainError("report_paths: empty chain");
    PathReport r;
    r.max_energy = -INFINITY;
    for (std::size_t k = 0; k < ch.states.size(); ++k) {
      const double u = potential.energy(ch.states[k]);
      if (u > r.max_energy) {
        r.max_energy = u;
        r.argmax_state = k;
      }
    }
    r.n_energy_evals = ch.n_energy_evals;
    s.total_energy_evals += ch.n_energy_evals;
    s.paths.push_back(r);
  }
  double m = 0.0;
  for (const auto& r : s.paths) m += r.max_energy;
  m /= static_cast<double>(s.paths.size());
  double v = 0.0;
  for (const auto& r : s.paths) v += (r.max_energy - m) * (r.max_energy - m);
  s.max_energy_mean = m;
  s.max_energy_std = s.paths.size() > 1 ? std::sqrt(v / static_cast<double>(s.paths.size() - 1)) : 0.0;
  s.n_energy_evals = s.paths.front().n_energy_evals;
  return s;
}

struct Grid2D {
  double x_lo = -2, x_hi = 2, y_lo = -2, y_hi = 2;
  std::size_t nx = 401, ny = 401;

  double x(std::size_t i) const { return x_lo + (x_hi - x_lo) * static_cast<double>(i) / static_cast<double>(nx - 1); }
  double y(std::size_t j) const { return y_lo + (y_hi - y_lo) * static_cast<double>(j) / static_cast<double>(ny - 1); }
};

/// min over grid paths (8-neighbour) from x_a to x_b of the maximum node energy,
/// by bottleneck Dijkstra. Endpoints snap to their nearest nodes.
inline double lower_bound_max_energy(const BoltzmannPotential& potential, const Vec& x_a, const Vec& x_b,
                                     const Grid2D& grid) {
  if (potential.dim != 2) throw DomainError("lower_bound_max_energy: 2D potentials only");
  if (grid.nx < 2 || grid.ny < 2) throw DomainError("lower_bound_max_energy: grid too small");
  auto inside = [&](const Vec& p) {
    return p.size() == 2 && p[0] >= grid.x_lo && p[0] <= grid.x_hi && p[1] >= grid.y_lo && p[1] <= grid.y_hi;
  };
  if (!inside(x_a) || !inside(x_b)) throw DomainError("lower_bound_max_energy: endpoint outside the grid");
  auto snap = [&](double v, double lo, double hi, std::size_t n) {
    return static_cast<std::size_t>(std::lround((v - lo) / (hi - lo) * static_cast<double>(n - 1)));
  };
  const std::size_t nx = grid.nx, ny = grid.ny;
  Vec u(nx * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) u[j * nx + i] = potential.energy(Vec{grid.x(i), grid.y(j)});
  }
  const std::size_t src = snap(x_a[1], grid.y_lo, grid.y_hi, ny) * nx + snap(x_a[0], grid.x_lo, grid.x_hi, nx);
  const std::size_t dst = snap(x_b[1], grid.y_lo, grid.y_hi, ny) * nx + snap(x_b[0], grid.x_lo, grid.x_hi, nx);
  Vec best(nx * ny, INFINITY);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  best[src] = u[src];
  pq.emplace(u[src], src);
  while (!pq.empty()) {
    const auto [b, k] = pq.top();
    pq.pop();
    if (b > best[k]) continue;
    if (k == dst) return b;
    const long i = static_cast<long>(k % nx), j = static_cast<long>(k / nx);
    for (long dj = -1; dj <= 1; ++dj) {
      for (long di = -1; di <= 1; ++di) {
        if (!di && !dj) continue;
        const long ii = i + di, jj = j + dj;
        if (ii < 0 || jj < 0 || ii >= static_cast<long>(nx) || jj >= static_cast<long>(ny)) continue;
        const std::size_t q = static_cast<std::size_t>(jj) * nx + static_cast<std::size_t>(ii);
        const double nb = std::max(b, u[q]);
        if (nb < best[q]) {
          best[q] = nb;
          pq.emplace(nb, q);
        }
      }
    }
  }
  return best[dst];
}

}  // namespace stgeo
