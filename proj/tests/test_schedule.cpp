#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stgeo/schedule.hpp"

using namespace stgeo;

TEST(Schedule, VpMidpointIsBalanced) {
  const auto s = NoiseSchedule::vp();
  const auto [a, sg] = s.alpha_sigma(0.5);
  EXPECT_NEAR(a, 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(sg, 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(s.snr(0.5), 1.0, 1e-14);
}

TEST(Schedule, VeIsIdentity) {
  const auto s = NoiseSchedule::ve();
  const auto [a, sg] = s.alpha_sigma(2.0);
  EXPECT_EQ(a, 1.0);
  EXPECT_EQ(sg, 2.0);
  EXPECT_NEAR(s.snr(1.0), 1.0, 1e-15);
  EXPECT_NEAR(s.snr(0.368), 7.3844, 1e-3);
  EXPECT_NEAR(std::log(s.snr(0.368)), 2.0, 1e-3);
}

TEST(Schedule, VpTerminalAlphaSquared) {
  // sigmoid(-10) = 1 / (1 + e^10)
  const double expected = 4.5397868702434395e-05;
  const auto [a, sg] = NoiseSchedule::vp().alpha_sigma(1.0);
  EXPECT_NEAR(a * a / expected, 1.0, 1e-12);
  (void)sg;
}

TEST(Schedule, TimeDomainErrors) {
  const auto s = NoiseSchedule::vp();
  EXPECT_THROW(s.alpha_sigma(0.0), DomainError);
  EXPECT_THROW(s.alpha_sigma(-0.1), DomainError);
  EXPECT_THROW(s.alpha_sigma(1.0 + 1e-9), DomainError);
  EXPECT_THROW(NoiseSchedule::ve(80).alpha_sigma(81.0), DomainError);
}

TEST(Schedule, LogSnrInverse) {
  const auto vp = NoiseSchedule::vp();
  EXPECT_NEAR(vp.t_of_logsnr(0.0), 0.5, 1e-15);
  const auto ve = NoiseSchedule::ve();
  EXPECT_NEAR(ve.t_of_logsnr(4.0), std::exp(-2.0), 1e-15);
  EXPECT_NEAR(ve.t_of_logsnr(2.0), 0.36787944117144233, 1e-15);
  EXPECT_THROW(vp.t_of_logsnr(10.5), DomainError);
  EXPECT_THROW(vp.t_of_logsnr(-10.5), DomainError);
  EXPECT_THROW(vp.t_of_logsnr(10.0), DomainError);  // maps to t = 0
  EXPECT_THROW(ve.t_of_logsnr(NAN), DomainError);
}

TEST(ScheduleProperty, RoundTripThroughLogSnr) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(1e-3, 1.0);
  for (const auto& s : {NoiseSchedule::vp(), NoiseSchedule::vp(-6, 8, 2.0), NoiseSchedule::ve(80)}) {
    for (int k = 0; k < 100; ++k) {
      const double t = u(rng) * s.T;
      const double back = s.t_of_logsnr(std::log(s.snr(t)));
      EXPECT_NEAR(back / t, 1.0, 1e-8) << s.kind_name() << " t=" << t;
      EXPECT_NEAR(std::log(s.snr(t)), s.log_snr(t), 1e-10);
    }
  }
}

TEST(ScheduleProperty, VpNormalizationAndMonotoneSnr) {
  const auto s = NoiseSchedule::vp();
  double prev = INFINITY;
  for (int k = 1; k <= 1000; ++k) {
    const double t = k / 1000.0;
    const auto [a, sg] = s.alpha_sigma(t);
    EXPECT_NEAR(a * a + sg * sg, 1.0, 1e-12);
    EXPECT_GT(a, 0.0);
    EXPECT_GT(sg, 0.0);
    const double snr = s.snr(t);
    EXPECT_LT(snr, prev);
    prev = snr;
  }
}

TEST(Schedule, DriftAndDiffusionMatchDerivatives) {
  // f = d log alpha / dt and g^2 = d sigma^2/dt - 2 f sigma^2, checked by central differences.
  for (const auto& s : {NoiseSchedule::vp(), NoiseSchedule::ve(80)}) {
    for (double t : {0.2 * s.T, 0.5 * s.T, 0.7 * s.T}) {
      const double h = 1e-6 * s.T;
      auto log_alpha = [&](double u) { return std::log(s.alpha_sigma(u).first); };
      auto sig2 = [&](double u) { return std::pow(s.alpha_sigma(u).second, 2); };
      const double f = (log_alpha(t + h) - log_alpha(t - h)) / (2 * h);
      const double g2 = (sig2(t + h) - sig2(t - h)) / (2 * h) - 2 * f * sig2(t);
      EXPECT_NEAR(s.drift(t), f, 1e-6 * (1 + std::abs(f)));
      EXPECT_NEAR(s.diffusion2(t), g2, 1e-6 * (1 + std::abs(g2)));
    }
  }
}

TEST(Schedule, DualDerivativeOfAlpha) {
  const auto s = NoiseSchedule::vp();
  const auto [a, sg] = s.alpha_sigma(Dual1(0.3, 1.0));
  // d log alpha / dt = f_t
  EXPECT_NEAR(a.d / a.v, s.drift(0.3), 1e-12);
  (void)sg;
}
