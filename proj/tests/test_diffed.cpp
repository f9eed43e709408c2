#include <gtest/gtest.h>

#include <cmath>

#include "stgeo/diffed.hpp"
#include "stgeo/models/gmm.hpp"

using namespace stgeo;

namespace {

const NoiseSchedule kVp = NoiseSchedule::vp();

const GmmDenoiser& paper_model() {
  static const GmmDenoiser m(GaussianMixture::paper_1d());
  return m;
}

const OptimizerConfig& config() {
  static const OptimizerConfig c = diffed_default_config(kVp);
  return c;
}

}  // namespace

TEST(DiffEd, AnchorAtLogSnrTwo) {
  EXPECT_NEAR(kVp.log_snr(default_anchor_time(kVp)), 2.0, 1e-12);
  EXPECT_EQ(config().t_min, default_anchor_time(kVp));
}

TEST(DiffEd, SelfDistanceVanishes) {
  for (double x : {-2.5, 0.5, 1.7}) {
    const auto r = diffed(paper_model(), kVp, Vec{x}, Vec{x}, config());
    EXPECT_GE(r.distance, 0.0);
    EXPECT_LT(r.distance, 1e-5) << "x = " << x;
  }
}

TEST(DiffEd, Symmetric) {
  const double ab = diffed(paper_model(), kVp, Vec{-2.5}, Vec{2.5}, config()).distance;
  const double ba = diffed(paper_model(), kVp, Vec{2.5}, Vec{-2.5}, config()).distance;
  EXPECT_LT(std::abs(ab - ba) / ab, 0.02);
}

TEST(DiffEd, IncreasesAcrossModes) {
  double prev = 0.0;
  for (double b : {-2.0, 0.5, 2.5}) {
    const double d = diffed(paper_model(), kVp, Vec{-2.5}, Vec{b}, config()).distance;
    EXPECT_GT(d, prev) << "b = " << b;
    prev = d;
  }
}

TEST(DiffEdProperty, NoLongerThanInitialization) {
  for (double b : {-1.0, 0.5, 2.5}) {
    const auto r = diffed(paper_model(), kVp, Vec{-2.5}, Vec{b}, config());
    EXPECT_LE(r.distance, r.initial_length + 1e-6) << "b = " << b;
    EXPECT_EQ(r.clamped_segments, 0);
  }
}

TEST(DiffEd, NonPositiveTminUsesAnchor) {
  auto cfg = config();
  cfg.t_min = 0.0;
  const auto r = diffed(paper_model(), kVp, Vec{-1.0}, Vec{1.0}, cfg);
  EXPECT_EQ(r.curve.endpoint0().t, default_anchor_time(kVp));
  EXPECT_EQ(r.distance, diffed(paper_model(), kVp, Vec{-1.0}, Vec{1.0}, config()).distance);
}

TEST(DiffEdMatrix, IndependentOfThreadCount) {
  auto cfg = config();
  cfg.steps = 200;
  const std::vector<Vec> pts{{-2.5}, {0.5}, {2.5}};
  const auto m1 = diffed_matrix(paper_model(), kVp, pts, cfg, 1);
  const auto m4 = diffed_matrix(paper_model(), kVp, pts, cfg, 4);
  EXPECT_EQ(m1, m4);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      EXPECT_GE(m1[i][j], 0.0);
      if (j != i) {
        EXPECT_LT(m1[i][i], m1[i][j]);
      }
    }
  }
}

TEST(DiffEdMatrix, PropagatesErrors) {
  const std::vector<Vec> pts{{0.0}, {1.0, 2.0}};
  EXPECT_THROW(diffed_matrix(paper_model(), kVp, pts, config(), 2), DomainError);
}
