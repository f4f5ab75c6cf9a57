#pragma once

#include "ssmcmc/model.hpp"
#include "ssmcmc/rng.hpp"

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace ssmcmc {

/// Unweighted particle approximation of a filtering posterior. Repeated
/// states are kept; the cloud is a multiset.
class ParticleCloud {
 public:
  ParticleCloud() = default;
  explicit ParticleCloud(std::vector<State> particles) : particles_(std::move(particles)) {}

  std::size_t size() const { return particles_.size(); }
  bool empty() const { return particles_.empty(); }
  const State& operator[](std::size_t i) const { return particles_[i]; }
  std::span<const State> particles() const { return particles_; }

  State mean() const {
    if (particles_.empty()) throw std::invalid_argument("particle cloud is empty");
    State m = State::Zero();
    for (const auto& p : particles_) m += p;
    return m / static_cast<double>(particles_.size());
  }

 private:
  std::vector<State> particles_;
};

/// Joint chain state (x_k, x_{k-1}).
struct ChainIterate {
  State xk;
  State xk_prev;
};

struct McmcConfig {
  std::size_t n_total = 500;
  std::size_t n_burn = 125;
  Eigen::Matrix4d sigma_q = 0.01 * Eigen::Matrix4d::Identity();

  std::size_t n_particles() const { return n_total - n_burn; }

  void validate() const {
    if (!(n_total > n_burn)) throw std::invalid_argument("mcmc: n_total must exceed n_burn");
    if (!sigma_q.allFinite()) throw std::invalid_argument("mcmc: sigma_q must be finite");
    Eigen::LLT<Eigen::Matrix4d> llt(sigma_q);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("mcmc: sigma_q must be positive definite");
  }
};

/// Random-walk refinement kernel with a cached Cholesky factor.
class RefinementKernel {
 public:
  explicit RefinementKernel(const McmcConfig& cfg) {
    cfg.validate();
    chol_ = Eigen::LLT<Eigen::Matrix4d>(cfg.sigma_q).matrixL();
  }

  template <class Engine>
  State sample(const State& center, Engine& rng) const {
    return center + chol_ * detail::standard_normal4(rng);
  }

  double logpdf(const State& to, const State& from) const {
    const Eigen::Vector4d white = chol_.triangularView<Eigen::Lower>().solve(to - from);
    const double logdet = 2.0 * chol_.diagonal().array().log().sum();
    return -0.5 * (4.0 * std::log(2.0 * std::numbers::pi) + logdet + white.squaredNorm());
  }

 private:
  Eigen::Matrix4d chol_;
};

/// Draws x_{k-1} uniformly from the cloud and x_k from the motion model.
template <class Engine>
ChainIterate propose_joint(const ParticleCloud& cloud, const MotionModel& motion, Engine& rng) {
  if (cloud.empty()) throw std::invalid_argument("propose_joint: empty particle cloud");
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
  const State& prev = cloud[pick(rng)];
  return {motion.sample(prev, rng), prev};
}

/// Joint-draw threshold. With the prior-times-particle-measure proposal, the
/// transition and particle factors cancel and only log(u) / M remains.
inline double psi_joint(double u, std::size_t m_k) {
  if (!(u > 0.0) || !(u <= 1.0)) throw std::invalid_argument("psi_joint: u must lie in (0, 1)");
  if (m_k == 0) throw std::invalid_argument("psi_joint: measurement count must be >= 1");
  return std::log(u) / static_cast<double>(m_k);
}

template <class Engine>
State propose_refine(const ChainIterate& cur, const RefinementKernel& kernel, Engine& rng) {
  return kernel.sample(cur.xk, rng);
}

/// Refinement threshold; the symmetric random-walk terms cancel.
inline double psi_refine(double u, const ChainIterate& cur, const State& x_star,
                         const MotionModel& motion, std::size_t m_k) {
  if (!(u > 0.0) || !(u <= 1.0)) throw std::invalid_argument("psi_refine: u must lie in (0, 1)");
  if (m_k == 0) throw std::invalid_argument("psi_refine: measurement count must be >= 1");
  const double log_ratio =
      std::log(u) + motion.logpdf(cur.xk, cur.xk_prev) - motion.logpdf(x_star, cur.xk_prev);
  return log_ratio / static_cast<double>(m_k);
}

/// Mean over all measurements of l(z | x_new) - l(z | x_old).
inline double full_loglik_ratio(std::span<const Measurement> z_all, const State& x_new,
                                const State& x_old, const ObservationModel& obs) {
  if (z_all.empty()) throw std::invalid_argument("full_loglik_ratio: empty measurement set");
  double sum = 0.0;
  for (const auto& z : z_all) sum += obs.loglik(z, x_new) - obs.loglik(z, x_old);
  return sum / static_cast<double>(z_all.size());
}

/// Which of the two Metropolis-Hastings moves a decision belongs to.
enum class MoveKind { kJoint, kRefine };

namespace detail {

/// Shared loop for the standard and subsampled filters.
///
/// `accept(kind, m, x_old, x_new, psi)` decides a move with m_k >= 1.
/// `on_burn_in_end(iterate)` runs once, before the first retained iteration.
/// Random draws per iteration are consumed in a fixed order (joint proposal,
/// u, refinement proposal, u) regardless of the acceptance rule, so two
/// filters driven by the same engine see the same proposals.
template <class Engine, class Accept, class BurnInHook>
ParticleCloud run_chain(const ParticleCloud& cloud_prev, std::size_t m_k, const McmcConfig& cfg,
                        const MotionModel& motion, Engine& rng, Accept&& accept,
                        BurnInHook&& on_burn_in_end) {
  cfg.validate();
  if (cloud_prev.empty()) throw std::invalid_argument("time update: empty particle cloud");
  const RefinementKernel kernel(cfg);

  std::vector<State> retained;
  retained.reserve(cfg.n_particles());

  ChainIterate cur = propose_joint(cloud_prev, motion, rng);
  if (cfg.n_burn == 0) on_burn_in_end(cur);

  for (std::size_t m = 1; m <= cfg.n_total; ++m) {
    const ChainIterate prop = propose_joint(cloud_prev, motion, rng);
    const double u1 = open_unit(rng);
    if (m_k == 0) {
      cur = prop;
    } else if (accept(MoveKind::kJoint, m, cur.xk, prop.xk, psi_joint(u1, m_k))) {
      cur = prop;
    }

    const State x_star = propose_refine(cur, kernel, rng);
    const double u2 = open_unit(rng);
    if (m_k == 0) {
      const double log_ratio =
          std::log(u2) + motion.logpdf(cur.xk, cur.xk_prev) - motion.logpdf(x_star, cur.xk_prev);
      if (0.0 > log_ratio) cur.xk = x_star;
    } else if (accept(MoveKind::kRefine, m, cur.xk, x_star,
                      psi_refine(u2, cur, x_star, motion, m_k))) {
      cur.xk = x_star;
    }

    if (m > cfg.n_burn) retained.push_back(cur.xk);
    if (m == cfg.n_burn) on_burn_in_end(cur);
  }
  return ParticleCloud(std::move(retained));
}

}  // namespace detail

/// One time step of the standard sequential MCMC filter: every move is
/// decided with the full-data log-likelihood ratio.
template <class Engine>
ParticleCloud smcmc_time_update(const ParticleCloud& cloud_prev, std::span<const Measurement> z_k,
                                const McmcConfig& cfg, const MotionModel& motion,
                                const ObservationModel& obs, Engine& rng) {
  return detail::run_chain(
      cloud_prev, z_k.size(), cfg, motion, rng,
      [&](MoveKind, std::size_t, const State& x_old, const State& x_new, double psi) {
        return full_loglik_ratio(z_k, x_new, x_old, obs) > psi;
      },
      [](const ChainIterate&) {});
}

/// Time-0 cloud: Gaussian draws around `center` with covariance `cov`.
template <class Engine>
ParticleCloud initial_cloud(const State& center, const Eigen::Matrix4d& cov, std::size_t n,
                            Engine& rng) {
  if (n == 0) throw std::invalid_argument("initial_cloud: particle count must be >= 1");
  Eigen::LLT<Eigen::Matrix4d> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("initial_cloud: covariance must be positive definite");
  const Eigen::Matrix4d chol = llt.matrixL();
  std::vector<State> ps;
  ps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ps.push_back(center + chol * detail::standard_normal4(rng));
  return ParticleCloud(std::move(ps));
}

}  // namespace ssmcmc
