#include <gtest/gtest.h>

#include "ssmcmc/model.hpp"
#include "ssmcmc/rng.hpp"
#include "oracles.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace ssmcmc {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

ObservationModel default_obs() { return ObservationModel(ObservationParams{}); }

Eigen::Matrix4d analytic_q(double ts, double sigma_x) { return oracle::ncv_covariance(ts, sigma_x); }

TEST(MotionModel, TransitionMeanExamples) {
  const MotionModel unit(MotionParams{1.0, 0.5});
  EXPECT_TRUE(transition_mean(State(0, 0, 1, 1), unit).isApprox(State(1, 1, 1, 1)));
  EXPECT_EQ(transition_mean(State(2, 3, 0, 0), unit), State(2, 3, 0, 0));
  const MotionModel half(MotionParams{0.5, 0.5});
  EXPECT_EQ(transition_mean(State(2, 3, 0, 0), half), State(2, 3, 0, 0));
  EXPECT_EQ(transition_mean(State(1, 2, 3, 4), half), State(2.5, 4, 3, 4));
}

TEST(MotionModel, RejectsInvalidParams) {
  EXPECT_THROW(MotionModel(MotionParams{0.0, 0.5}), std::invalid_argument);
  EXPECT_THROW(MotionModel(MotionParams{1.0, -1.0}), std::invalid_argument);
}

TEST(MotionModel, NoiselessLimitIsTheMean) {
  const MotionModel motion(MotionParams{1.0, 1e-300});
  Rng rng(7);
  const State prev(1, 2, 3, 4);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(transition_sample(prev, motion, rng), motion.mean(prev));
}

TEST(MotionModel, SampleMomentsMatchAnalyticCovariance) {
  const MotionModel motion(MotionParams{1.0, 0.5});
  const Eigen::Matrix4d q = analytic_q(1.0, 0.5);
  EXPECT_TRUE(motion.covariance().isApprox(q, 1e-12));

  Rng rng(11);
  const int n = 100000;
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  Eigen::Matrix4d outer = Eigen::Matrix4d::Zero();
  for (int i = 0; i < n; ++i) {
    const State x = transition_sample(State::Zero(), motion, rng);
    sum += x;
    outer += x * x.transpose();
  }
  const Eigen::Vector4d mean = sum / n;
  const Eigen::Matrix4d cov = outer / n - mean * mean.transpose();
  for (int i = 0; i < 4; ++i) {
    EXPECT_LT(std::abs(mean(i)), 3.0 * std::sqrt(q(i, i) / n)) << "component " << i;
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double scale = std::sqrt(q(i, i) * q(j, j));
      EXPECT_LT(std::abs(cov(i, j) - q(i, j)), 0.05 * scale) << i << "," << j;
    }
  }
}

TEST(MotionModel, LogpdfPeaksAtMeanWithGaussianNormaliser) {
  const MotionModel motion(MotionParams{1.0, 0.5});
  const State prev(1, -2, 0.5, 0.25);
  const State mode = motion.mean(prev);
  const double at_mode = transition_logpdf(mode, prev, motion);
  const double expected = -0.5 * std::log(std::pow(kTwoPi, 4) * analytic_q(1.0, 0.5).determinant());
  EXPECT_NEAR(at_mode, expected, 1e-12);
  Rng rng(3);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 50; ++i) {
    const State off = mode + 0.1 * State(n01(rng), n01(rng), n01(rng), n01(rng));
    EXPECT_LT(transition_logpdf(off, prev, motion), at_mode);
  }
}

TEST(MotionModel, LogpdfMatchesIndependentOracle) {
  Rng rng(5);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  std::uniform_real_distribution<double> pos(0.2, 2.0);
  for (int i = 0; i < 100; ++i) {
    const double ts = pos(rng);
    const double sx = pos(rng);
    const MotionModel motion(MotionParams{ts, sx});
    const State prev(unif(rng), unif(rng), unif(rng), unif(rng));
    const State x = motion.mean(prev) + State(unif(rng), unif(rng), unif(rng), unif(rng)) * 0.5;
    const double got = transition_logpdf(x, prev, motion);
    const double want = oracle::mvn_logpdf<4>(x, oracle::ncv_transition(ts) * prev, analytic_q(ts, sx));
    EXPECT_NEAR(got, want, 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST(MotionModel, DensityIntegratesToOneOnAGrid) {
  const MotionModel motion(MotionParams{1.0, 0.5});
  const State prev = State::Zero();
  const Eigen::Matrix4d q = motion.covariance();
  const int n = 40;
  const double half = 6.0;
  Eigen::Vector4d lo, step;
  for (int i = 0; i < 4; ++i) {
    const double sd = std::sqrt(q(i, i));
    lo(i) = -half * sd;
    step(i) = 2.0 * half * sd / n;
  }
  double total = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        for (int d = 0; d < n; ++d) {
          const State x(lo(0) + (a + 0.5) * step(0), lo(1) + (b + 0.5) * step(1),
                        lo(2) + (c + 0.5) * step(2), lo(3) + (d + 0.5) * step(3));
          total += std::exp(transition_logpdf(x, prev, motion));
        }
  total *= step.prod();
  EXPECT_NEAR(total, 1.0, 0.02);
}

// --- observation model ----------------------------------------------------

TEST(ObservationModel, ClutterOnlyLimit) {
  ObservationParams p;
  p.lambda_x = 0.0;
  const ObservationModel obs(p);
  const double expected = std::log(2000.0 / 4e4);
  EXPECT_DOUBLE_EQ(loglik_single(Measurement(3, 4), State(0, 0, 1, 1), obs), expected);
  EXPECT_DOUBLE_EQ(loglik_single(Measurement(-50, 9), State(7, 1, 0, 0), obs), expected);
  EXPECT_EQ(loglik_grad(Measurement(3, 4), State(0, 0, 1, 1), obs), Gradient::Zero());
}

TEST(ObservationModel, ValueAtTheTargetPosition) {
  const auto obs = default_obs();
  const State x(1.5, -2.0, 0.3, 0.1);
  const double expected = std::log(500.0 / kTwoPi + 0.05);
  EXPECT_NEAR(loglik_single(Measurement(1.5, -2.0), x, obs), expected, 1e-13);
}

TEST(ObservationModel, TailApproachesClutterFloorFromAbove) {
  const auto obs = default_obs();
  const double floor = std::log(0.05);
  double prev = std::numeric_limits<double>::infinity();
  for (double r : {1.0, 3.0, 5.0, 8.0, 12.0, 40.0, 1e3}) {
    const double v = loglik_single(Measurement(r, 0.0), State::Zero(), obs);
    EXPECT_GE(v, floor);
    EXPECT_LE(v, prev);
    prev = v;
  }
  EXPECT_NEAR(prev, floor, 1e-15);
}

TEST(ObservationModel, NeverBelowClutterFloor) {
  const auto obs = default_obs();
  Rng rng(9);
  std::uniform_real_distribution<double> unif(-100.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const Measurement z(unif(rng), unif(rng));
    const State x(unif(rng), unif(rng), unif(rng), unif(rng));
    EXPECT_GE(loglik_single(z, x, obs), obs.log_clutter_density());
  }
}

TEST(ObservationModel, NoTargetMeansNoFiniteValueWhenClutterIsZeroToo) {
  ObservationParams p;
  p.lambda_x = 0.0;
  p.lambda_c = 0.0;
  const ObservationModel obs(p);
  EXPECT_EQ(loglik_single(Measurement(0, 0), State::Zero(), obs),
            -std::numeric_limits<double>::infinity());
}

TEST(ObservationModel, RejectsInvalidParams) {
  ObservationParams p;
  p.sigma << 1, 2, 2, 1;  // indefinite
  EXPECT_THROW(ObservationModel{p}, std::invalid_argument);
  p = {};
  p.region_x = 0.0;
  EXPECT_THROW(ObservationModel{p}, std::invalid_argument);
  p = {};
  p.lambda_c = -1.0;
  EXPECT_THROW(ObservationModel{p}, std::invalid_argument);
}

TEST(ObservationModel, GradientVanishesAtTheModeAndWithoutTarget) {
  const auto obs = default_obs();
  const State x(4, 5, 6, 7);
  EXPECT_EQ(loglik_grad(Measurement(4, 5), x, obs), Gradient::Zero());
}

// Random (z, x) pairs whose offsets keep the gradient well above round-off.
struct Pair {
  Measurement z;
  State x;
};

std::vector<Pair> random_pairs(std::uint64_t seed, double spread, int n = 100) {
  Rng rng(seed);
  std::uniform_real_distribution<double> base(-50.0, 50.0);
  std::uniform_real_distribution<double> off(-spread, spread);
  std::vector<Pair> out;
  for (int i = 0; i < n; ++i) {
    const State x(base(rng), base(rng), off(rng), off(rng));
    out.push_back({position(x) + Eigen::Vector2d(off(rng), off(rng)), x});
  }
  return out;
}

std::vector<ObservationModel> observation_variants() {
  std::vector<ObservationModel> out;
  out.emplace_back(ObservationParams{});
  ObservationParams aniso;
  aniso.sigma << 1.5, 0.4, 0.4, 0.7;
  out.emplace_back(aniso);
  ObservationParams peaked;
  peaked.sigma = 0.25 * Eigen::Matrix2d::Identity();
  out.emplace_back(peaked);
  return out;
}

TEST(ObservationModel, GradientMatchesCentralDifferences) {
  const double h = 1e-6;
  for (const auto& obs : observation_variants()) {
    const double spread = 4.0 * std::sqrt(obs.params().sigma.trace() / 2.0);
    for (const auto& [z, x] : random_pairs(21, spread)) {
      const Gradient g = loglik_grad(z, x, obs);
      EXPECT_EQ(g(2), 0.0);
      EXPECT_EQ(g(3), 0.0);
      if (g.norm() < 1e-12) continue;
      Gradient fd = Gradient::Zero();
      for (int i = 0; i < 2; ++i) {
        State xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        fd(i) = (loglik_single(z, xp, obs) - loglik_single(z, xm, obs)) / (2.0 * h);
      }
      // Rounding in the difference quotient is about eps |l| / h ~ 1e-9.
      EXPECT_LT((fd - g).norm(), 1e-7 + 1e-5 * g.norm())
          << "z=" << z.transpose() << " x=" << x.transpose();
    }
  }
}

TEST(ObservationModel, HessianMatchesDifferencesOfTheGradient) {
  const double h = 1e-6;
  for (const auto& obs : observation_variants()) {
    const double spread = 4.0 * std::sqrt(obs.params().sigma.trace() / 2.0);
    for (const auto& [z, x] : random_pairs(33, spread)) {
      const Eigen::Matrix2d hess = loglik_hessian(z, x, obs);
      EXPECT_EQ(hess(0, 1), hess(1, 0));
      Eigen::Matrix2d fd;
      for (int j = 0; j < 2; ++j) {
        State xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        fd.col(j) = (loglik_grad(z, xp, obs) - loglik_grad(z, xm, obs)).head<2>() / (2.0 * h);
      }
      EXPECT_LT((fd - hess).norm(), 1e-7 + 1e-4 * hess.norm());
    }
  }
}

TEST(ObservationModel, HessianAtTheModeIsScaledIdentity) {
  const auto obs = default_obs();
  const double n0 = 1.0 / kTwoPi;
  const double expected = -500.0 * n0 / (500.0 * n0 + 0.05);
  const Eigen::Matrix2d h = loglik_hessian(Measurement(2, 2), State(2, 2, 0, 0), obs);
  EXPECT_NEAR(h(0, 0), expected, 1e-14);
  EXPECT_NEAR(h(1, 1), expected, 1e-14);
  EXPECT_EQ(h(0, 1), 0.0);
}

// --- spectral bound -------------------------------------------------------

// Radial scan for isotropic sigma = s^2 I: eigenvalues are -w/s^2 across the
// offset and -w/s^2 + w(1-w) r^2/s^4 along it.
double radial_scan_oracle(double lambda_x, double lambda_c, double area, double s) {
  const double c = lambda_c / area;
  double best = 0.0;
  const int n = 200000;
  for (int i = 0; i <= n; ++i) {
    const double r = 20.0 * s * i / n;
    const double gauss = std::exp(-0.5 * r * r / (s * s)) / (kTwoPi * s * s);
    const double w = lambda_x * gauss / (lambda_x * gauss + c);
    const double across = w / (s * s);
    const double along = std::abs(-w / (s * s) + w * (1.0 - w) * r * r / (s * s * s * s));
    best = std::max({best, across, along});
  }
  return best;
}

TEST(SpectralBound, ZeroWithoutTargetTerm) {
  ObservationParams p;
  p.lambda_x = 0.0;
  EXPECT_EQ(hessian_spectral_bound(ObservationModel(p)), 0.0);
}

TEST(SpectralBound, MatchesRadialScanWithSafetyFactor) {
  for (double s : {2.0, 1.0, 0.5, 0.25}) {
    ObservationParams p;
    p.sigma = s * s * Eigen::Matrix2d::Identity();
    const double y = hessian_spectral_bound(ObservationModel(p));
    const double oracle = radial_scan_oracle(500.0, 2000.0, 4e4, s);
    EXPECT_GE(y, oracle) << "s=" << s;
    EXPECT_NEAR(y, 1.01 * oracle, 1e-6 * oracle) << "s=" << s;
  }
}

TEST(SpectralBound, ClutterFreeBoundIsTheInverseCovariance) {
  ObservationParams p;
  p.lambda_c = 0.0;
  p.sigma = 0.5 * Eigen::Matrix2d::Identity();
  EXPECT_NEAR(hessian_spectral_bound(ObservationModel(p)), 1.01 * 2.0, 1e-12);
}

TEST(SpectralBound, DominatesRandomOffsetsForAnisotropicSigma) {
  ObservationParams p;
  p.sigma << 1.5, 0.4, 0.4, 0.7;
  const ObservationModel obs(p);
  const double y = hessian_spectral_bound(obs);
  Rng rng(17);
  std::uniform_real_distribution<double> off(-8.0, 8.0);
  double worst = 0.0;
  for (int i = 0; i < 200000; ++i) {
    worst = std::max(worst, spectral_norm_sym2(obs.hessian_at_offset({off(rng), off(rng)})));
  }
  EXPECT_GE(y, worst);
  EXPECT_LT(y, 1.02 * worst);
}

TEST(SpectralNorm, SymmetricTwoByTwo) {
  Eigen::Matrix2d h;
  h << 2.0, 1.0, 1.0, 2.0;
  EXPECT_NEAR(spectral_norm_sym2(h), 3.0, 1e-15);
  h << -4.0, 0.0, 0.0, 1.0;
  EXPECT_NEAR(spectral_norm_sym2(h), 4.0, 1e-15);
}

TEST(LogAddExp, HandlesInfinitiesAndLargeGaps) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(detail::log_add_exp(-inf, 2.0), 2.0);
  EXPECT_EQ(detail::log_add_exp(2.0, -inf), 2.0);
  EXPECT_NEAR(detail::log_add_exp(0.0, 0.0), std::log(2.0), 1e-15);
  EXPECT_EQ(detail::log_add_exp(-2000.0, -3.0), -3.0);
}

}  // namespace
}  // namespace ssmcmc
