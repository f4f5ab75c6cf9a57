#pragma once

#include "ssmcmc/asmcmc.hpp"
#include "ssmcmc/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssmcmc {

/// Synthetic single-target scene with cluttered measurements.
struct Scenario {
  std::vector<State> truth;
  std::vector<MeasurementSet> measurements;
  MotionParams motion;
  ObservationParams observation;
  std::uint64_t seed = 0;

  std::size_t steps() const { return truth.size(); }
};

struct RunStats {
  std::vector<State> estimates;
  std::vector<StepDiagnostics> diagnostics;
  double wall_time = 0.0;  ///< seconds
};

template <class Engine>
std::vector<State> simulate_trajectory(const State& x0, const MotionModel& motion,
                                       std::size_t t_steps, Engine& rng) {
  if (t_steps < 1) throw std::invalid_argument("simulate_trajectory: t_steps must be >= 1");
  std::vector<State> truth;
  truth.reserve(t_steps);
  State x = x0;
  for (std::size_t k = 0; k < t_steps; ++k) {
    x = motion.sample(x, rng);
    truth.push_back(x);
  }
  return truth;
}

/// Poisson(lambda_x) target detections around pos(x_true) and Poisson(lambda_c)
/// clutter points uniform on the sensor region centred at the origin. The
/// union is shuffled so no origin labels survive.
template <class Engine>
MeasurementSet simulate_measurements(const State& x_true, const ObservationModel& obs,
                                     Engine& rng) {
  const auto& p = obs.params();
  MeasurementSet out;
  if (p.lambda_x > 0.0) {
    std::poisson_distribution<std::size_t> count(p.lambda_x);
    const std::size_t n = count(rng);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d e(n01(rng), n01(rng));
      out.push_back(position(x_true) + obs.sigma_chol() * e);
    }
  }
  if (p.lambda_c > 0.0) {
    std::poisson_distribution<std::size_t> count(p.lambda_c);
    const std::size_t n = count(rng);
    std::uniform_real_distribution<double> ux(-0.5 * p.region_x, 0.5 * p.region_x);
    std::uniform_real_distribution<double> uy(-0.5 * p.region_y, 0.5 * p.region_y);
    for (std::size_t i = 0; i < n; ++i) {
      const double zx = ux(rng);
      out.emplace_back(zx, uy(rng));
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

template <class Engine>
Scenario make_scenario(const State& x0, const MotionParams& mp, const ObservationParams& op,
                       std::size_t t_steps, std::uint64_t seed, Engine& rng) {
  const MotionModel motion(mp);
  const ObservationModel obs(op);
  Scenario sc;
  sc.motion = mp;
  sc.observation = op;
  sc.seed = seed;
  sc.truth = simulate_trajectory(x0, motion, t_steps, rng);
  sc.measurements.reserve(t_steps);
  for (const auto& x : sc.truth) sc.measurements.push_back(simulate_measurements(x, obs, rng));
  return sc;
}

/// Per-step positional RMSE across runs: RMSE of px and of py, averaged.
inline std::vector<double> rmse(const std::vector<std::vector<State>>& truths,
                                const std::vector<std::vector<State>>& estimates) {
  if (truths.empty() || truths.size() != estimates.size())
    throw std::invalid_argument("rmse: need the same number (>= 1) of truth and estimate runs");
  const std::size_t t_steps = truths.front().size();
  for (std::size_t r = 0; r < truths.size(); ++r) {
    if (truths[r].size() != t_steps || estimates[r].size() != t_steps)
      throw std::invalid_argument("rmse: misaligned run lengths");
  }
  const double n_runs = static_cast<double>(truths.size());
  std::vector<double> out(t_steps, 0.0);
  for (std::size_t k = 0; k < t_steps; ++k) {
    double sx = 0.0, sy = 0.0;
    for (std::size_t r = 0; r < truths.size(); ++r) {
      const Eigen::Vector2d e = position(estimates[r][k]) - position(truths[r][k]);
      sx += e.x() * e.x();
      sy += e.y() * e.y();
    }
    out[k] = 0.5 * (std::sqrt(sx / n_runs) + std::sqrt(sy / n_runs));
  }
  return out;
}

/// Per-step normalised measurement consumption
/// sum_m (S_joint + S_refine) / (2 N M_k).
inline double step_ratio(const StepDiagnostics& d, std::size_t n_iter) {
  if (d.m_k == 0) throw std::invalid_argument("step_ratio: step has no measurements");
  if (d.s_joint.size() != n_iter || d.s_refine.size() != n_iter)
    throw std::invalid_argument("step_ratio: incomplete diagnostics");
  double total = 0.0;
  for (std::size_t m = 0; m < n_iter; ++m)
    total += static_cast<double>(d.s_joint[m] + d.s_refine[m]);
  return total / (2.0 * static_cast<double>(n_iter) * static_cast<double>(d.m_k));
}

/// Time-averaged D. Steps without measurements involve no likelihood work and
/// are left out of the average.
inline double subsample_ratio_D(const std::vector<StepDiagnostics>& diags, std::size_t n_iter,
                                std::size_t t_steps) {
  if (diags.size() != t_steps || t_steps == 0)
    throw std::invalid_argument("subsample_ratio_D: diagnostics do not cover every step");
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& d : diags) {
    if (d.m_k == 0) continue;
    sum += step_ratio(d, n_iter);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("subsample_ratio_D: no step had measurements");
  return sum / static_cast<double>(counted);
}

// ---------------------------------------------------------------------------
// Plain-text scenario records
//
//   # ssmcmc scenario v1
//   T <step> <px> <py> <vx> <vy>
//   Z <step> <zx> <zy>
//
// Steps are 0-based, values are printed with 17 significant digits so every
// double round-trips exactly. One T line per step, precedes its Z lines.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_scenario(std::ostream& os, const Scenario& sc) {
  os << "# ssmcmc scenario v1\n";
  for (std::size_t k = 0; k < sc.truth.size(); ++k) {
    const State& x = sc.truth[k];
    os << "T " << k;
    for (int i = 0; i < 4; ++i) os << ' ' << format_double(x(i));
    os << '\n';
    for (const auto& z : sc.measurements[k])
      os << "Z " << k << ' ' << format_double(z.x()) << ' ' << format_double(z.y()) << '\n';
  }
}

namespace detail {

inline double parse_double(const std::string& tok, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || !std::isfinite(v))
    throw std::runtime_error("scenario line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  return v;
}

}  // namespace detail

/// Reads truth and measurements; model parameters are left at their defaults.
inline Scenario read_scenario(std::istream& is) {
  Scenario sc;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag, step_tok;
    ls >> tag >> step_tok;
    std::size_t step = 0;
    const auto [ptr, ec] = std::from_chars(step_tok.data(), step_tok.data() + step_tok.size(), step);
    if (ec != std::errc{} || ptr != step_tok.data() + step_tok.size())
      throw std::runtime_error("scenario line " + std::to_string(line_no) + ": bad step index");
    std::vector<double> vals;
    for (std::string tok; ls >> tok;) vals.push_back(detail::parse_double(tok, line_no));
    if (tag == "T") {
      if (vals.size() != 4 || step != sc.truth.size())
        throw std::runtime_error("scenario line " + std::to_string(line_no) + ": malformed truth record");
      sc.truth.emplace_back(vals[0], vals[1], vals[2], vals[3]);
      sc.measurements.emplace_back();
    } else if (tag == "Z") {
      if (vals.size() != 2 || sc.truth.empty() || step != sc.truth.size() - 1)
        throw std::runtime_error("scenario line " + std::to_string(line_no) + ": malformed measurement record");
      sc.measurements.back().emplace_back(vals[0], vals[1]);
    } else {
      throw std::runtime_error("scenario line " + std::to_string(line_no) + ": unknown record '" + tag + "'");
    }
  }
  if (sc.truth.empty()) throw std::runtime_error("scenario: no steps");
  return sc;
}

}  // namespace ssmcmc
