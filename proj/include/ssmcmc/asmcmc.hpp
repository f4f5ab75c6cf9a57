#pragma once

#include "ssmcmc/chain.hpp"
#include "ssmcmc/subsample.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace ssmcmc {

/// Points within a time step where the proxy is re-anchored.
enum class ProxyUpdateMarker { kStartOfStep, kPostBurnIn };

/// Measurement consumption of one time step.
struct StepDiagnostics {
  std::vector<std::size_t> s_joint;
  std::vector<std::size_t> s_refine;
  std::size_t m_k = 0;
  std::vector<ProxyUpdateMarker> proxy_updates;
  /// Gradient evaluations spent building proxies; not part of D.
  std::size_t gradient_evals = 0;
};

/// One subsampled accept/reject decision, reported to an optional observer.
struct DecisionRecord {
  MoveKind kind = MoveKind::kJoint;
  std::size_t iteration = 0;
  State x_old;
  State x_new;
  double psi = 0.0;
  double estimate = 0.0;
  std::size_t s_used = 0;
  bool accepted = false;
};

/// Refreshes the proxy at `x_anchor`: one gradient per measurement.
inline ProxyContext update_proxy_context(std::span<const Measurement> z_k, const State& x_anchor,
                                         const ObservationModel& obs, double y_bound) {
  return make_proxy_context(z_k, x_anchor, obs, y_bound);
}

/// Start-of-step anchor: the motion-model prediction of the previous cloud mean.
inline State predicted_mean(const ParticleCloud& cloud_prev, const MotionModel& motion) {
  return motion.mean(cloud_prev.mean());
}

struct NoDecisionObserver {
  void operator()(const DecisionRecord&) const {}
};

/// One time step of the adaptive-subsampling sequential MCMC filter.
///
/// The chain consumes `chain_rng` exactly as `smcmc_time_update` does;
/// measurement subsampling draws come from `subsample_rng`. A move is accepted
/// when the subsampled corrected ratio plus the mean proxy exceeds psi.
template <class Engine, class Observer = NoDecisionObserver>
std::pair<ParticleCloud, StepDiagnostics> asmcmc_time_update(
    const ParticleCloud& cloud_prev, std::span<const Measurement> z_k, const McmcConfig& cfg,
    const SubsampleConfig& scfg, const MotionModel& motion, const ObservationModel& obs,
    double y_bound, Engine& chain_rng, Engine& subsample_rng, Observer&& observer = {}) {
  scfg.validate();
  StepDiagnostics diag;
  diag.m_k = z_k.size();
  diag.s_joint.reserve(cfg.n_total);
  diag.s_refine.reserve(cfg.n_total);

  ProxyContext ctx;
  auto refresh = [&](const State& anchor, ProxyUpdateMarker marker) {
    diag.proxy_updates.push_back(marker);
    if (z_k.empty()) return;
    ctx = update_proxy_context(z_k, anchor, obs, y_bound);
    diag.gradient_evals += z_k.size();
  };
  refresh(predicted_mean(cloud_prev, motion), ProxyUpdateMarker::kStartOfStep);

  std::vector<std::size_t> perm;
  auto accept = [&](MoveKind kind, std::size_t m, const State& x_old, const State& x_new,
                    double psi) {
    const SubsampleOutcome out =
        adaptive_loglik_ratio(z_k, x_old, x_new, psi, ctx, scfg, obs, subsample_rng, perm);
    const bool accepted = out.lambda_hat > psi - out.proxy_mean;
    (kind == MoveKind::kJoint ? diag.s_joint : diag.s_refine).push_back(out.s_used);
    observer(DecisionRecord{kind, m, x_old, x_new, psi, out.estimate(), out.s_used, accepted});
    return accepted;
  };

  ParticleCloud cloud = detail::run_chain(
      cloud_prev, z_k.size(), cfg, motion, chain_rng, accept,
      [&](const ChainIterate& it) { refresh(it.xk, ProxyUpdateMarker::kPostBurnIn); });
  return {std::move(cloud), std::move(diag)};
}

}  // namespace ssmcmc
