#pragma once

// Noise schedules for the forward kernel x_t | x_0 ~ N(alpha_t x_0, sigma_t^2 I).

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stgeo/dual.hpp"
#include "stgeo/errors.hpp"

namespace stgeo {

enum class ScheduleKind { vp_logsnr_linear, ve };

/// A point z = (x_t, t) of the latent spacetime.
struct SpacetimePoint {
  std::vector<double> x;
  double t = 0.0;

  std::size_t dim() const { return x.size(); }
  bool operator==(const SpacetimePoint&) const = default;
};

struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::vp_logsnr_linear;
  double lambda_min = -10.0;
  double lambda_max = 10.0;
  double T = 1.0;

  /// Variance-preserving, log-SNR linear in t from lambda_max (t=0) to lambda_min (t=T).
  static NoiseSchedule vp(double lambda_min = -10.0, double lambda_max = 10.0, double T = 1.0) {
    NoiseSchedule s{ScheduleKind::vp_logsnr_linear, lambda_min, lambda_max, T};
    s.validate();
    return s;
  }

  /// Variance-exploding with alpha_t = 1, sigma_t = t.
  static NoiseSchedule ve(double T = 80.0) {
    NoiseSchedule s{ScheduleKind::ve, -2.0 * std::log(T), std::numeric_limits<double>::infinity(), T};
    s.validate();
    return s;
  }

  void validate() const {
    if (!(T > 0) || !std::isfinite(T)) throw DomainError("schedule: T must be positive and finite");
    if (kind == ScheduleKind::vp_logsnr_linear && !(lambda_min < lambda_max)) {
      throw DomainError("schedule: lambda_min must be below lambda_max");
    }
  }

  std::string kind_name() const { return kind == ScheduleKind::ve ? "ve" : "vp_logsnr_linear"; }

  void check_time(double t) const {
    if (!(t > 0.0) || !(t <= T)) {
      std::ostringstream os;
      os << "diffusion time " << t << " outside (0, " << T << "]";
      throw DomainError(os.str());
    }
  }

  /// lambda_t = log SNR(t).
  template <class S>
  S log_snr(const S& t) const {
    check_time(value_of(t));
    if (kind == ScheduleKind::ve) {
      using fn::log;
      return -2.0 * log(t);
    }
    return lambda_max + (lambda_min - lambda_max) / T * t;
  }

  /// d lambda / dt.
  double dlog_snr_dt(double t) const {
    check_time(t);
    if (kind == ScheduleKind::ve) return -2.0 / t;
    return (lambda_min - lambda_max) / T;
  }

  /// (alpha_t, sigma_t). VP values are formed from log-sigmoids so that exp(+-lambda)
  /// never overflows.
  template <class S>
  std::pair<S, S> alpha_sigma(const S& t) const {
    check_time(value_of(t));
    if (kind == ScheduleKind::ve) return {S(1.0), t};
    using fn::exp;
    const S lam = log_snr(t);
    const S alpha = exp(-0.5 * fn::softplus(-lam));
    const S sigma = exp(-0.5 * fn::softplus(lam));
    return {alpha, sigma};
  }

  template <class S>
  S snr(const S& t) const {
    using fn::exp;
    if (kind == ScheduleKind::ve) return 1.0 / (t * t);
    return exp(log_snr(t));
  }

  /// Inverse of log_snr.
  double t_of_logsnr(double lambda) const {
    if (!std::isfinite(lambda)) throw DomainError("t_of_logsnr: lambda must be finite");
    if (kind == ScheduleKind::ve) {
      const double t = std::exp(-0.5 * lambda);
      if (!(t <= T)) throw DomainError("t_of_logsnr: lambda below the schedule range");
      return t;
    }
    if (lambda < lambda_min || lambda > lambda_max) {
      std::ostringstream os;
      os << "t_of_logsnr: lambda " << lambda << " outside [" << lambda_min << ", " << lambda_max << "]";
      throw DomainError(os.str());
    }
    const double t = T * (lambda_max - lambda) / (lambda_max - lambda_min);
    // lambda == lambda_max maps to t = 0, which is outside the time domain.
    if (!(t > 0.0)) throw DomainError("t_of_logsnr: lambda maps to t = 0");
    return t;
  }

  /// Forward drift coefficient f_t = d log alpha_t / dt.
  double drift(double t) const {
    if (kind == ScheduleKind::ve) {
      check_time(t);
      return 0.0;
    }
    const auto [a, s] = alpha_sigma(t);
    (void)a;
    return 0.5 * dlog_snr_dt(t) * s * s;
  }

  /// Squared diffusion coefficient g_t^2 = d sigma_t^2/dt - 2 f_t sigma_t^2.
  double diffusion2(double t) const {
    if (kind == ScheduleKind::ve) {
      check_time(t);
      return 2.0 * t;
    }
    const auto [a, s] = alpha_sigma(t);
    (void)a;
    return -dlog_snr_dt(t) * s * s;
  }
};

}  // namespace stgeo
