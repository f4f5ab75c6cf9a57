#pragma once

#include "ssmcmc/model.hpp"

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ssmcmc {

struct SubsampleConfig {
  double gamma = 1.2;  ///< geometric batch growth factor
  double delta = 0.1;  ///< total failure probability budget
  double p_exp = 2.0;  ///< exponent of the per-stage budget schedule
  /// Always consume every measurement. Turns the routine into an exact
  /// (but proxy-corrected) evaluation; used to switch subsampling off.
  bool force_full = false;

  void validate() const {
    if (!(gamma > 1.0) || !std::isfinite(gamma))
      throw std::invalid_argument("subsample: gamma must be > 1");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("subsample: delta must lie in (0, 1)");
    if (!(p_exp > 1.0) || !std::isfinite(p_exp))
      throw std::invalid_argument("subsample: p must be > 1");
  }
};

/// First-order Taylor proxy anchored at x_plus, plus the Hessian bound used
/// for the Taylor-Lagrange range bound. Immutable once built.
struct ProxyContext {
  State x_plus = State::Zero();
  std::vector<Gradient> grads;
  Gradient grad_mean = Gradient::Zero();
  double y_bound = 0.0;
};

struct SubsampleOutcome {
  double lambda_hat = 0.0;  ///< mean of (log-ratio - proxy) over the subsample
  double proxy_mean = 0.0;  ///< mean proxy over all measurements
  std::size_t s_used = 0;
  bool exact = false;
  std::size_t stages = 0;

  /// Estimate of the full averaged log-likelihood ratio.
  double estimate() const { return lambda_hat + proxy_mean; }
};

/// Per-stage record, available to callers that need to audit the bound.
struct StageTrace {
  std::size_t s = 0;
  double lambda_hat = 0.0;
  double halfwidth = 0.0;
};

/// Failure budget for stage w: (p-1)/(p w^p) * delta. Sums to at most delta.
inline double delta_schedule(std::size_t w, const SubsampleConfig& cfg) {
  if (w < 1) throw std::invalid_argument("delta_schedule: stage index must be >= 1");
  const double wd = static_cast<double>(w);
  return (cfg.p_exp - 1.0) / (cfg.p_exp * std::pow(wd, cfg.p_exp)) * cfg.delta;
}

/// Empirical Bernstein confidence half-width for a mean of s terms with
/// sample variance v and range r, at failure probability delta_s.
inline double bernstein_halfwidth(double v_sample, double r, std::size_t s, double delta_s) {
  if (!(v_sample >= 0.0) || !(r >= 0.0) || s < 1 || !(delta_s > 0.0 && delta_s < 1.0))
    throw std::invalid_argument("bernstein_halfwidth: argument out of domain");
  const double sd = static_cast<double>(s);
  const double log_term = std::log(3.0 / delta_s);
  return std::sqrt(2.0 * v_sample * log_term / sd) + 3.0 * r * log_term / sd;
}

/// Proxy for measurement i: grad_i(x+) . (x_new - x_old).
inline double proxy_value(std::size_t i, const ProxyContext& ctx, const State& x_old,
                          const State& x_new) {
  if (i >= ctx.grads.size()) throw std::out_of_range("proxy_value: measurement index out of range");
  return ctx.grads[i].dot(x_new - x_old);
}

/// Taylor-Lagrange bound on the spread of the proxy-corrected terms:
/// 2 (Y d_old^2 / 2 + Y d_new^2 / 2) with d the position distance to x+.
inline double range_upper_bound(const ProxyContext& ctx, const State& x_old, const State& x_new) {
  const double d_old = (position(x_old) - position(ctx.x_plus)).squaredNorm();
  const double d_new = (position(x_new) - position(ctx.x_plus)).squaredNorm();
  return ctx.y_bound * (d_old + d_new);
}

/// Builds the proxy from gradients at `anchor` for every measurement.
inline ProxyContext make_proxy_context(std::span<const Measurement> z_k, const State& anchor,
                                       const ObservationModel& obs, double y_bound) {
  ProxyContext ctx;
  ctx.x_plus = anchor;
  ctx.y_bound = y_bound;
  ctx.grads.reserve(z_k.size());
  Gradient sum = Gradient::Zero();
  for (const auto& z : z_k) {
    ctx.grads.push_back(obs.gradient(z, anchor));
    sum += ctx.grads.back();
  }
  if (!z_k.empty()) ctx.grad_mean = sum / static_cast<double>(z_k.size());
  return ctx;
}

/// Next cumulative subsample size: max(ceil(gamma S), S + 1), capped at M.
inline std::size_t next_batch_end(std::size_t s, std::size_t m, double gamma) {
  const auto grown = static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(s)));
  return std::min(std::max(grown, s + 1), m);
}

/// Adaptive subsampled estimate of the averaged log-likelihood ratio for
/// deciding `estimate() > psi`.
///
/// Measurements are drawn without replacement by a partial Fisher-Yates
/// shuffle of `perm`, which must hold a permutation of [0, M) (it is reset if
/// its size differs). Batches grow geometrically and the routine stops once
/// the empirical Bernstein half-width certifies the side of psi, or when all
/// measurements are consumed.
template <class Engine>
SubsampleOutcome adaptive_loglik_ratio(std::span<const Measurement> z_all, const State& x_old,
                                       const State& x_new, double psi, const ProxyContext& ctx,
                                       const SubsampleConfig& cfg, const ObservationModel& obs,
                                       Engine& rng, std::vector<std::size_t>& perm,
                                       std::vector<StageTrace>* trace = nullptr) {
  const std::size_t m = z_all.size();
  if (m == 0) throw std::invalid_argument("adaptive_loglik_ratio: empty measurement set");
  if (ctx.grads.size() != m)
    throw std::invalid_argument("adaptive_loglik_ratio: proxy context built for another set");
  if (perm.size() != m) {
    perm.resize(m);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
  }

  const Gradient step = x_new - x_old;
  SubsampleOutcome out;
  out.proxy_mean = ctx.grad_mean.dot(step);
  const double range = range_upper_bound(ctx, x_old, x_new);

  // Welford accumulators over the corrected terms.
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t s = 0;
  std::size_t b = cfg.force_full ? m : 1;
  std::size_t w = 0;

  while (true) {
    ++w;
    for (; s < b; ++s) {
      std::uniform_int_distribution<std::size_t> pick(s, m - 1);
      std::swap(perm[s], perm[pick(rng)]);
      const std::size_t i = perm[s];
      const Measurement& z = z_all[i];
      const double term = obs.loglik(z, x_new) - obs.loglik(z, x_old) - ctx.grads[i].dot(step);
      const double delta = term - mean;
      mean += delta / static_cast<double>(s + 1);
      m2 += delta * (term - mean);
    }
    const double variance = s > 1 ? m2 / static_cast<double>(s - 1) : 0.0;
    const double c = s == m ? 0.0
                            : bernstein_halfwidth(variance, range, s, delta_schedule(w, cfg));
    if (trace) trace->push_back({s, mean, c});
    if (s == m || std::abs(mean + out.proxy_mean - psi) >= c) break;
    b = next_batch_end(s, m, cfg.gamma);
  }

  out.lambda_hat = mean;
  out.s_used = s;
  out.exact = s == m;
  out.stages = w;
  return out;
}

template <class Engine>
SubsampleOutcome adaptive_loglik_ratio(std::span<const Measurement> z_all, const State& x_old,
                                       const State& x_new, double psi, const ProxyContext& ctx,
                                       const SubsampleConfig& cfg, const ObservationModel& obs,
                                       Engine& rng) {
  std::vector<std::size_t> perm;
  return adaptive_loglik_ratio(z_all, x_old, x_new, psi, ctx, cfg, obs, rng, perm);
}

}  // namespace ssmcmc
