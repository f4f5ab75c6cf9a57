#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssmcmc {

/// Target kinematic state [px, py, vx, vy].
using State = Eigen::Vector4d;
/// A single planar detection [zx, zy].
using Measurement = Eigen::Vector2d;
using MeasurementSet = std::vector<Measurement>;
using Gradient = Eigen::Vector4d;

inline Eigen::Vector2d position(const State& x) { return x.head<2>(); }

inline bool all_finite(const State& x) { return x.allFinite(); }

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log(exp(a) + exp(b)) without overflow; either argument may be -inf.
inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

/// exp(a) / (exp(a) + exp(b)), evaluated as a logistic in (a - b).
inline double mixture_weight(double a, double b) {
  if (a == kNegInf) return 0.0;
  if (b == kNegInf) return 1.0;
  const double t = a - b;
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

template <class Rng>
Eigen::Vector4d standard_normal4(Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::Vector4d v;
  for (int i = 0; i < 4; ++i) v(i) = n01(rng);
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Motion model
// ---------------------------------------------------------------------------

struct MotionParams {
  double ts = 1.0;       ///< sampling period
  double sigma_x = 0.5;  ///< process noise intensity

  void validate() const {
    if (!(ts > 0.0) || !std::isfinite(ts))
      throw std::invalid_argument("motion: ts must be positive and finite");
    if (!(sigma_x > 0.0) || !std::isfinite(sigma_x))
      throw std::invalid_argument("motion: sigma_x must be positive and finite");
  }
};

/// Near-constant-velocity model with cached factorisations.
///
/// Q = sigma_x^2 * Q1(ts); the unit-intensity factor Q1 is Cholesky-factored
/// once and sigma_x is applied as a scalar, so very small intensities do not
/// underflow the factor.
class MotionModel {
 public:
  explicit MotionModel(MotionParams params) : params_(params) {
    params_.validate();
    const double t = params_.ts;
    transition_.setIdentity();
    transition_(0, 2) = t;
    transition_(1, 3) = t;

    Eigen::Matrix4d q1 = Eigen::Matrix4d::Zero();
    const double t3 = t * t * t / 3.0;
    const double t2 = t * t / 2.0;
    q1(0, 0) = q1(1, 1) = t3;
    q1(0, 2) = q1(2, 0) = q1(1, 3) = q1(3, 1) = t2;
    q1(2, 2) = q1(3, 3) = t;
    Eigen::LLT<Eigen::Matrix4d> llt(q1);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("motion: process covariance is not positive definite");
    unit_chol_ = llt.matrixL();
    const double logdet_unit = 2.0 * unit_chol_.diagonal().array().log().sum();
    log_norm_ = -0.5 * (4.0 * std::log(2.0 * std::numbers::pi) + logdet_unit +
                        8.0 * std::log(params_.sigma_x));
  }

  const MotionParams& params() const { return params_; }
  const Eigen::Matrix4d& transition() const { return transition_; }
  Eigen::Matrix4d covariance() const {
    return params_.sigma_x * params_.sigma_x * (unit_chol_ * unit_chol_.transpose());
  }
  /// log of the Gaussian normaliser, -(1/2) log((2 pi)^4 det Q).
  double log_normaliser() const { return log_norm_; }

  State mean(const State& prev) const { return transition_ * prev; }

  template <class Rng>
  State sample(const State& prev, Rng& rng) const {
    return mean(prev) + params_.sigma_x * (unit_chol_ * detail::standard_normal4(rng));
  }

  double logpdf(const State& x, const State& prev) const {
    const Eigen::Vector4d diff = x - mean(prev);
    const Eigen::Vector4d white =
        unit_chol_.triangularView<Eigen::Lower>().solve(diff) / params_.sigma_x;
    return log_norm_ - 0.5 * white.squaredNorm();
  }

 private:
  MotionParams params_;
  Eigen::Matrix4d transition_;
  Eigen::Matrix4d unit_chol_;
  double log_norm_ = 0.0;
};

inline State transition_mean(const State& prev, const MotionModel& motion) {
  return motion.mean(prev);
}

template <class Rng>
State transition_sample(const State& prev, const MotionModel& motion, Rng& rng) {
  return motion.sample(prev, rng);
}

inline double transition_logpdf(const State& x, const State& prev, const MotionModel& motion) {
  return motion.logpdf(x, prev);
}

// ---------------------------------------------------------------------------
// Observation model: Poisson target/clutter mixture
// ---------------------------------------------------------------------------

struct ObservationParams {
  double lambda_x = 500.0;   ///< mean number of target detections
  double lambda_c = 2000.0;  ///< mean number of clutter detections
  Eigen::Matrix2d sigma = Eigen::Matrix2d::Identity();
  double region_x = 200.0;
  double region_y = 200.0;

  double clutter_area() const { return region_x * region_y; }

  void validate() const {
    if (!(lambda_x >= 0.0) || !std::isfinite(lambda_x))
      throw std::invalid_argument("observation: lambda_x must be >= 0");
    if (!(lambda_c >= 0.0) || !std::isfinite(lambda_c))
      throw std::invalid_argument("observation: lambda_c must be >= 0");
    if (!(region_x > 0.0) || !(region_y > 0.0) || !std::isfinite(region_x) ||
        !std::isfinite(region_y))
      throw std::invalid_argument("observation: sensor region extents must be positive");
    if (!sigma.allFinite() || std::abs(sigma(0, 1) - sigma(1, 0)) > 1e-12 * sigma.norm())
      throw std::invalid_argument("observation: sigma must be finite and symmetric");
    Eigen::LLT<Eigen::Matrix2d> llt(sigma);
    if (llt.info() != Eigen::Success || !(sigma(0, 0) > 0.0) || !(sigma.determinant() > 0.0))
      throw std::invalid_argument("observation: sigma must be positive definite");
  }
};

/// Per-measurement log-likelihood
///   l(z | x) = log(lambda_x N(z; pos(x), sigma) + lambda_c / A_c)
/// evaluated in log space, together with its position-space derivatives.
class ObservationModel {
 public:
  explicit ObservationModel(ObservationParams params) : params_(std::move(params)) {
    params_.validate();
    Eigen::LLT<Eigen::Matrix2d> llt(params_.sigma);
    chol_ = llt.matrixL();
    sigma_inv_ = llt.solve(Eigen::Matrix2d::Identity());
    sigma_inv_ = 0.5 * (sigma_inv_ + sigma_inv_.transpose()).eval();
    const double logdet = 2.0 * chol_.diagonal().array().log().sum();
    log_target_scale_ = params_.lambda_x > 0.0
                            ? std::log(params_.lambda_x) - std::log(2.0 * std::numbers::pi) -
                                  0.5 * logdet
                            : detail::kNegInf;
    log_clutter_ = params_.lambda_c > 0.0
                       ? std::log(params_.lambda_c) - std::log(params_.clutter_area())
                       : detail::kNegInf;
  }

  const ObservationParams& params() const { return params_; }
  const Eigen::Matrix2d& sigma_inv() const { return sigma_inv_; }
  const Eigen::Matrix2d& sigma_chol() const { return chol_; }
  /// log(lambda_x / (2 pi sqrt(det sigma))), -inf when lambda_x = 0.
  double log_target_scale() const { return log_target_scale_; }
  /// log(lambda_c / A_c), -inf when lambda_c = 0.
  double log_clutter_density() const { return log_clutter_; }

  /// log(lambda_x N(z; p, sigma)) for an offset d = z - p.
  double log_target_term(const Eigen::Vector2d& d) const {
    return log_target_scale_ - 0.5 * d.dot(sigma_inv_ * d);
  }

  double loglik(const Measurement& z, const State& x) const {
    return detail::log_add_exp(log_target_term(z - position(x)), log_clutter_);
  }

  /// Posterior probability that z came from the target at x.
  double target_weight(const Eigen::Vector2d& d) const {
    return detail::mixture_weight(log_target_term(d), log_clutter_);
  }

  Gradient gradient(const Measurement& z, const State& x) const {
    const Eigen::Vector2d d = z - position(x);
    Gradient g = Gradient::Zero();
    const double w = target_weight(d);
    if (w > 0.0) g.head<2>() = w * (sigma_inv_ * d);
    return g;
  }

  /// Position-block Hessian: -w S^-1 + w(1-w) (S^-1 d)(S^-1 d)^T with w the
  /// target weight, which is the two-term mixture expression rearranged.
  Eigen::Matrix2d hessian_at_offset(const Eigen::Vector2d& d) const {
    const double w = target_weight(d);
    const Eigen::Vector2d g = sigma_inv_ * d;
    Eigen::Matrix2d h = -w * sigma_inv_ + (w * (1.0 - w)) * (g * g.transpose());
    h(1, 0) = h(0, 1);
    return h;
  }

  Eigen::Matrix2d hessian(const Measurement& z, const State& x) const {
    return hessian_at_offset(z - position(x));
  }

 private:
  ObservationParams params_;
  Eigen::Matrix2d chol_;
  Eigen::Matrix2d sigma_inv_;
  double log_target_scale_ = 0.0;
  double log_clutter_ = 0.0;
};

inline double loglik_single(const Measurement& z, const State& x, const ObservationModel& obs) {
  return obs.loglik(z, x);
}

inline Gradient loglik_grad(const Measurement& z, const State& x, const ObservationModel& obs) {
  return obs.gradient(z, x);
}

inline Eigen::Matrix2d loglik_hessian(const Measurement& z, const State& x,
                                      const ObservationModel& obs) {
  return obs.hessian(z, x);
}

/// Largest absolute eigenvalue of a symmetric 2x2 matrix.
inline double spectral_norm_sym2(const Eigen::Matrix2d& h) {
  const double mid = 0.5 * (h(0, 0) + h(1, 1));
  const double half_gap = std::hypot(0.5 * (h(0, 0) - h(1, 1)), 0.5 * (h(0, 1) + h(1, 0)));
  return std::max(std::abs(mid + half_gap), std::abs(mid - half_gap));
}

/// Upper bound on the Hessian spectral norm over all offsets z - pos(x).
///
/// The weight w depends on the offset only through the Mahalanobis radius, so
/// offsets are parameterised as d = L * rho * (cos t, sin t) with L the
/// Cholesky factor of sigma. An isotropic sigma only needs the radial scan.
/// Each scan is followed by a golden-section refinement around the best grid
/// cell and the result is inflated by 1%.
inline double hessian_spectral_bound(const ObservationModel& obs) {
  const auto& p = obs.params();
  if (p.lambda_x == 0.0) return 0.0;

  // Radius where target and clutter terms balance; beyond it w decays like a Gaussian.
  double rho_cross = 0.0;
  if (obs.log_clutter_density() != detail::kNegInf) {
    const double gap = obs.log_target_scale() - obs.log_clutter_density();
    if (gap > 0.0) rho_cross = std::sqrt(2.0 * gap);
  }
  const double rho_max = std::max(20.0, rho_cross + 20.0);

  const Eigen::Matrix2d& chol = obs.sigma_chol();
  auto norm_at = [&](double rho, double theta) {
    const Eigen::Vector2d u(rho * std::cos(theta), rho * std::sin(theta));
    return spectral_norm_sym2(obs.hessian_at_offset(chol * u));
  };

  const bool isotropic = std::abs(p.sigma(0, 1)) == 0.0 && p.sigma(0, 0) == p.sigma(1, 1);
  const int n_theta = isotropic ? 1 : 180;
  const int n_rho = 4000;
  const double d_theta = std::numbers::pi / n_theta;
  const double d_rho = rho_max / n_rho;

  double best = 0.0;
  double best_rho = 0.0;
  double best_theta = 0.0;
  for (int it = 0; it < n_theta; ++it) {
    const double theta = it * d_theta;
    for (int ir = 0; ir <= n_rho; ++ir) {
      const double rho = ir * d_rho;
      const double v = norm_at(rho, theta);
      if (v > best) {
        best = v;
        best_rho = rho;
        best_theta = theta;
      }
    }
  }

  // Coordinate-wise golden-section refinement.
  auto golden_max = [](auto f, double lo, double hi) {
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < 80; ++i) {
      if (fc > fd) {
        b = d; d = c; fd = fc;
        c = b - g * (b - a); fc = f(c);
      } else {
        a = c; c = d; fc = fd;
        d = a + g * (b - a); fd = f(d);
      }
    }
    const double x = 0.5 * (a + b);
    return std::pair{x, f(x)};
  };
  for (int sweep = 0; sweep < 3; ++sweep) {
    auto [r, vr] = golden_max([&](double rho) { return norm_at(rho, best_theta); },
                              std::max(0.0, best_rho - d_rho), best_rho + d_rho);
    if (vr > best) { best = vr; best_rho = r; }
    if (isotropic) break;
    auto [t, vt] = golden_max([&](double th) { return norm_at(best_rho, th); },
                              best_theta - d_theta, best_theta + d_theta);
    if (vt > best) { best = vt; best_theta = t; }
  }
  return 1.01 * best;
}

}  // namespace ssmcmc
