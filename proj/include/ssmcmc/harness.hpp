#pragma once

#include "ssmcmc/asmcmc.hpp"
#include "ssmcmc/chain.hpp"
#include "ssmcmc/rng.hpp"
#include "ssmcmc/scenario.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace ssmcmc {

enum class Mode { kStandard, kAdaptive, kPaired, kReplayOracle };
enum class Algorithm { kStandard, kAdaptive };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::kStandard: return "standard";
    case Mode::kAdaptive: return "adaptive";
    case Mode::kPaired: return "paired";
    case Mode::kReplayOracle: return "replay-oracle";
  }
  return "?";
}

inline const char* to_string(Algorithm a) {
  return a == Algorithm::kStandard ? "standard" : "adaptive";
}

/// Configuration problem tied to a specific key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

using Override = std::pair<std::string, std::string>;

struct ExperimentConfig {
  MotionParams motion;
  ObservationParams observation;
  McmcConfig mcmc;
  SubsampleConfig subsample;
  State x0 = State(0.0, 0.0, 1.0, 1.0);
  double init_pos_sd = 1.0;
  double init_vel_sd = 0.5;
  std::size_t n_runs = 50;
  std::size_t t_steps = 20;
  std::uint64_t master_seed = 1;
  Mode mode = Mode::kPaired;
  std::size_t workers = 1;
  bool timing = false;
  /// Each entry is one sweep point: overrides applied on top of the base.
  std::vector<std::vector<Override>> sweep;

  void validate() const {
    auto wrap = [](const char* key, auto&& fn) {
      try {
        fn();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(key, e.what());
      }
    };
    wrap("model", [&] { motion.validate(); });
    wrap("obs", [&] { observation.validate(); });
    wrap("mcmc", [&] { mcmc.validate(); });
    wrap("subsample", [&] { subsample.validate(); });
    if (!x0.allFinite()) throw ConfigError("init.x0", "must be finite");
    if (!(init_pos_sd > 0.0)) throw ConfigError("init.pos_sd", "must be positive");
    if (!(init_vel_sd > 0.0)) throw ConfigError("init.vel_sd", "must be positive");
    if (n_runs < 1) throw ConfigError("run.n_runs", "must be >= 1");
    if (t_steps < 1) throw ConfigError("run.t_steps", "must be >= 1");
    if (workers < 1) throw ConfigError("run.workers", "must be >= 1");
  }

  /// Compact parameter fingerprint carried on every CSV row.
  std::string fingerprint() const {
    std::ostringstream os;
    os << "ts=" << format_double(motion.ts) << ";sigma_x=" << format_double(motion.sigma_x)
       << ";lambda_x=" << format_double(observation.lambda_x)
       << ";lambda_c=" << format_double(observation.lambda_c)
       << ";sigma=" << format_double(observation.sigma(0, 0)) << '/'
       << format_double(observation.sigma(0, 1)) << '/' << format_double(observation.sigma(1, 1))
       << ";region=" << format_double(observation.region_x) << 'x'
       << format_double(observation.region_y) << ";n=" << mcmc.n_total
       << ";n_burn=" << mcmc.n_burn << ";gamma=" << format_double(subsample.gamma)
       << ";delta=" << format_double(subsample.delta) << ";p=" << format_double(subsample.p_exp)
       << ";full=" << (subsample.force_full ? 1 : 0) << ";T=" << t_steps
       << ";seed=" << master_seed;
    return os.str();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || !std::isfinite(d)) throw ConfigError(key, "expected a number, got '" + v + "'");
  return d;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size())
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

inline std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  for (std::string tok; std::getline(ss, tok, ',');) out.push_back(to_double(key, trim(tok)));
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

}  // namespace detail

inline Mode parse_mode(const std::string& v) {
  if (v == "standard") return Mode::kStandard;
  if (v == "adaptive") return Mode::kAdaptive;
  if (v == "paired") return Mode::kPaired;
  if (v == "replay-oracle") return Mode::kReplayOracle;
  throw ConfigError("run.mode", "unknown mode '" + v + "'");
}

/// Parses "key=value;key=value" into a sweep point.
inline std::vector<Override> parse_sweep_point(const std::string& v) {
  std::vector<Override> point;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ';');) {
    item = detail::trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("sweep", "entry '" + item + "' lacks '='");
    point.emplace_back(detail::trim(item.substr(0, eq)), detail::trim(item.substr(eq + 1)));
  }
  if (point.empty()) throw ConfigError("sweep", "empty sweep point");
  return point;
}

/// Applies one key=value setting.
inline void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "model.ts") cfg.motion.ts = to_double(key, v);
  else if (key == "model.sigma_x") cfg.motion.sigma_x = to_double(key, v);
  else if (key == "obs.lambda_x") cfg.observation.lambda_x = to_double(key, v);
  else if (key == "obs.lambda_c") cfg.observation.lambda_c = to_double(key, v);
  else if (key == "obs.sigma_z") {
    const double s = to_double(key, v);
    cfg.observation.sigma = s * s * Eigen::Matrix2d::Identity();
  } else if (key == "obs.sigma") {
    const auto xs = to_list(key, v);
    if (xs.size() != 3) throw ConfigError(key, "expected 'sxx,sxy,syy'");
    cfg.observation.sigma << xs[0], xs[1], xs[1], xs[2];
  } else if (key == "obs.region_x") cfg.observation.region_x = to_double(key, v);
  else if (key == "obs.region_y") cfg.observation.region_y = to_double(key, v);
  else if (key == "mcmc.n_total") cfg.mcmc.n_total = to_uint(key, v);
  else if (key == "mcmc.n_burn") cfg.mcmc.n_burn = to_uint(key, v);
  else if (key == "mcmc.sigma_q") cfg.mcmc.sigma_q = to_double(key, v) * Eigen::Matrix4d::Identity();
  else if (key == "subsample.gamma") cfg.subsample.gamma = to_double(key, v);
  else if (key == "subsample.delta") cfg.subsample.delta = to_double(key, v);
  else if (key == "subsample.p") cfg.subsample.p_exp = to_double(key, v);
  else if (key == "subsample.force_full") cfg.subsample.force_full = to_bool(key, v);
  else if (key == "init.x0") {
    const auto xs = to_list(key, v);
    if (xs.size() != 4) throw ConfigError(key, "expected 'px,py,vx,vy'");
    cfg.x0 = State(xs[0], xs[1], xs[2], xs[3]);
  } else if (key == "init.pos_sd") cfg.init_pos_sd = to_double(key, v);
  else if (key == "init.vel_sd") cfg.init_vel_sd = to_double(key, v);
  else if (key == "run.n_runs") cfg.n_runs = to_uint(key, v);
  else if (key == "run.t_steps") cfg.t_steps = to_uint(key, v);
  else if (key == "run.seed") cfg.master_seed = to_uint(key, v);
  else if (key == "run.mode") cfg.mode = parse_mode(v);
  else if (key == "run.workers") cfg.workers = to_uint(key, v);
  else if (key == "run.timing") cfg.timing = to_bool(key, v);
  else if (key == "sweep") cfg.sweep.push_back(parse_sweep_point(v));
  else throw ConfigError(key, "unknown key");
}

/// Reads `key = value` lines; `#` starts a comment. `sweep` may repeat.
inline ExperimentConfig parse_config(std::istream& is, ExperimentConfig cfg = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no), "expected key=value");
    apply_override(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig with_overrides(ExperimentConfig cfg, const std::vector<Override>& point) {
  for (const auto& [k, v] : point) {
    if (k == "sweep") throw ConfigError(k, "sweep points cannot nest");
    apply_override(cfg, k, v);
  }
  cfg.sweep.clear();
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct RunResult {
  std::vector<State> truth;
  std::vector<State> estimates;
  std::vector<StepDiagnostics> diagnostics;  ///< adaptive only
  std::vector<double> step_seconds;
};

/// Replay bookkeeping for one step.
struct ReplayStep {
  std::size_t decisions = 0;
  std::size_t disagreements = 0;
};

inline std::uint64_t run_key(std::size_t sweep_id, std::size_t run) {
  return (static_cast<std::uint64_t>(sweep_id) << 32) ^ static_cast<std::uint64_t>(run);
}

inline Scenario scenario_for_run(const ExperimentConfig& cfg, std::uint64_t key) {
  Rng rng = make_stream(cfg.master_seed, key, StreamPurpose::kScenario);
  return make_scenario(cfg.x0, cfg.motion, cfg.observation, cfg.t_steps, key, rng);
}

inline ParticleCloud initial_cloud_for_run(const ExperimentConfig& cfg, std::uint64_t key) {
  Rng rng = make_stream(cfg.master_seed, key, StreamPurpose::kInitialCloud);
  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  cov.diagonal() << cfg.init_pos_sd * cfg.init_pos_sd, cfg.init_pos_sd * cfg.init_pos_sd,
      cfg.init_vel_sd * cfg.init_vel_sd, cfg.init_vel_sd * cfg.init_vel_sd;
  return initial_cloud(cfg.x0, cov, cfg.mcmc.n_particles(), rng);
}

/// Filters a scenario with one algorithm. `replay`, when given, receives one
/// entry per step with the full-data re-evaluation of every adaptive decision.
inline RunResult run_filter(const ExperimentConfig& cfg, const Scenario& sc, Algorithm alg,
                            std::uint64_t key, std::vector<ReplayStep>* replay = nullptr) {
  const MotionModel motion(cfg.motion);
  const ObservationModel obs(cfg.observation);
  const double y_bound = hessian_spectral_bound(obs);
  Rng chain_rng = make_stream(cfg.master_seed, key,
                              alg == Algorithm::kStandard ? StreamPurpose::kStandardChain
                                                          : StreamPurpose::kAdaptiveChain);
  Rng sub_rng = make_stream(cfg.master_seed, key, StreamPurpose::kSubsample);

  RunResult res;
  res.truth = sc.truth;
  ParticleCloud cloud = initial_cloud_for_run(cfg, key);
  for (std::size_t k = 0; k < sc.steps(); ++k) {
    const auto& z = sc.measurements[k];
    const auto t0 = std::chrono::steady_clock::now();
    if (alg == Algorithm::kStandard) {
      cloud = smcmc_time_update(cloud, z, cfg.mcmc, motion, obs, chain_rng);
    } else if (replay) {
      ReplayStep rs;
      auto [next, diag] = asmcmc_time_update(
          cloud, z, cfg.mcmc, cfg.subsample, motion, obs, y_bound, chain_rng, sub_rng,
          [&](const DecisionRecord& d) {
            const bool full = full_loglik_ratio(z, d.x_new, d.x_old, obs) > d.psi;
            ++rs.decisions;
            if (full != d.accepted) ++rs.disagreements;
          });
      cloud = std::move(next);
      res.diagnostics.push_back(std::move(diag));
      replay->push_back(rs);
    } else {
      auto [next, diag] = asmcmc_time_update(cloud, z, cfg.mcmc, cfg.subsample, motion, obs,
                                             y_bound, chain_rng, sub_rng);
      cloud = std::move(next);
      res.diagnostics.push_back(std::move(diag));
    }
    res.step_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    res.estimates.push_back(cloud.mean());
  }
  return res;
}

/// Runs `jobs` on up to `workers` threads; job i writes only its own slot.
inline void parallel_for(std::size_t jobs, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, jobs));
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

inline constexpr const char* kCsvHeader =
    "sweep_id,algorithm,seed,step,rmse,d_ratio,s_mean_joint,s_mean_refine,wall_ms,params";

/// Aggregated output of one sweep point.
struct SweepPointResult {
  std::size_t sweep_id = 0;
  ExperimentConfig cfg;
  std::map<Algorithm, std::vector<RunResult>> runs;

  std::vector<double> rmse_per_step(Algorithm alg) const {
    std::vector<std::vector<State>> truths, ests;
    for (const auto& r : runs.at(alg)) {
      truths.push_back(r.truth);
      ests.push_back(r.estimates);
    }
    return rmse(truths, ests);
  }

  /// D averaged over runs.
  double mean_d() const {
    const auto& rs = runs.at(Algorithm::kAdaptive);
    double sum = 0.0;
    for (const auto& r : rs) sum += subsample_ratio_D(r.diagnostics, cfg.mcmc.n_total, cfg.t_steps);
    return sum / static_cast<double>(rs.size());
  }
};

inline std::vector<Algorithm> algorithms_for(Mode m) {
  switch (m) {
    case Mode::kStandard: return {Algorithm::kStandard};
    case Mode::kAdaptive: return {Algorithm::kAdaptive};
    case Mode::kPaired: return {Algorithm::kStandard, Algorithm::kAdaptive};
    case Mode::kReplayOracle: return {Algorithm::kAdaptive};
  }
  return {};
}

/// Expands the sweep (or the base config alone) into sweep points.
inline std::vector<ExperimentConfig> sweep_points(const ExperimentConfig& cfg) {
  if (cfg.sweep.empty()) return {cfg};
  std::vector<ExperimentConfig> out;
  for (const auto& point : cfg.sweep) out.push_back(with_overrides(cfg, point));
  return out;
}

/// Generates every (sweep point, seed) scenario and runs the mode's
/// algorithms on it. Paired runs share the scenario and initial cloud.
inline std::vector<SweepPointResult> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.mode == Mode::kReplayOracle)
    throw ConfigError("run.mode", "replay-oracle runs through run_replay_oracle");
  const auto points = sweep_points(cfg);
  const auto algs = algorithms_for(cfg.mode);

  std::vector<SweepPointResult> results(points.size());
  for (std::size_t s = 0; s < points.size(); ++s) {
    results[s].sweep_id = s;
    results[s].cfg = points[s];
    for (auto a : algs) results[s].runs[a].resize(cfg.n_runs);
  }
  const std::size_t jobs = points.size() * cfg.n_runs;
  parallel_for(jobs, cfg.workers, [&](std::size_t j) {
    const std::size_t s = j / cfg.n_runs;
    const std::size_t r = j % cfg.n_runs;
    const auto& pcfg = points[s];
    const std::uint64_t key = run_key(s, r);
    const Scenario sc = scenario_for_run(pcfg, key);
    for (auto a : algs) results[s].runs[a][r] = run_filter(pcfg, sc, a, key);
  });
  return results;
}

inline void write_results_csv(std::ostream& os, const std::vector<SweepPointResult>& results,
                              bool timing) {
  auto fmt = [](double v) { return format_double(v); };
  auto wall = [&](double seconds) { return timing ? fmt(1e3 * seconds) : std::string(); };
  os << kCsvHeader << '\n';
  for (const auto& sp : results) {
    const std::string params = sp.cfg.fingerprint();
    const std::size_t n_iter = sp.cfg.mcmc.n_total;
    for (const auto& [alg, runs] : sp.runs) {
      const bool adaptive = alg == Algorithm::kAdaptive;
      const std::size_t t_steps = sp.cfg.t_steps;
      std::vector<double> d_sum(t_steps, 0.0), sj_sum(t_steps, 0.0), sr_sum(t_steps, 0.0),
          wall_sum(t_steps, 0.0);
      std::vector<std::size_t> d_count(t_steps, 0);
      for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto& run = runs[r];
        for (std::size_t k = 0; k < t_steps; ++k) {
          const Eigen::Vector2d e = position(run.estimates[k]) - position(run.truth[k]);
          const double single = 0.5 * (std::abs(e.x()) + std::abs(e.y()));
          std::string d, sj, sr;
          if (adaptive && run.diagnostics[k].m_k > 0) {
            const auto& dg = run.diagnostics[k];
            const double ratio = step_ratio(dg, n_iter);
            double tj = 0.0, tr = 0.0;
            for (std::size_t m = 0; m < n_iter; ++m) {
              tj += static_cast<double>(dg.s_joint[m]);
              tr += static_cast<double>(dg.s_refine[m]);
            }
            tj /= static_cast<double>(n_iter);
            tr /= static_cast<double>(n_iter);
            d = fmt(ratio);
            sj = fmt(tj);
            sr = fmt(tr);
            d_sum[k] += ratio;
            sj_sum[k] += tj;
            sr_sum[k] += tr;
            ++d_count[k];
          }
          wall_sum[k] += run.step_seconds[k];
          os << sp.sweep_id << ',' << to_string(alg) << ',' << r << ',' << k << ','
             << fmt(single) << ',' << d << ',' << sj << ',' << sr << ','
             << wall(run.step_seconds[k]) << ',' << params << '\n';
        }
      }
      const auto agg = sp.rmse_per_step(alg);
      double rmse_total = 0.0, wall_total = 0.0;
      for (std::size_t k = 0; k < t_steps; ++k) {
        std::string d, sj, sr;
        if (adaptive && d_count[k] > 0) {
          const double n = static_cast<double>(d_count[k]);
          d = fmt(d_sum[k] / n);
          sj = fmt(sj_sum[k] / n);
          sr = fmt(sr_sum[k] / n);
        }
        rmse_total += agg[k];
        wall_total += wall_sum[k];
        os << sp.sweep_id << ',' << to_string(alg) << ",all," << k << ',' << fmt(agg[k]) << ','
           << d << ',' << sj << ',' << sr << ',' << wall(wall_sum[k]) << ',' << params << '\n';
      }
      os << sp.sweep_id << ',' << to_string(alg) << ",all,all,"
         << fmt(rmse_total / static_cast<double>(t_steps)) << ','
         << (adaptive ? fmt(sp.mean_d()) : std::string()) << ",,," << wall(wall_total) << ','
         << params << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Replay oracle
// ---------------------------------------------------------------------------

struct ReplayReport {
  std::size_t sweep_id = 0;
  ExperimentConfig cfg;
  /// [run][step]
  std::vector<std::vector<ReplayStep>> steps;

  std::size_t total_decisions() const {
    std::size_t n = 0;
    for (const auto& run : steps)
      for (const auto& s : run) n += s.decisions;
    return n;
  }
  std::size_t total_disagreements() const {
    std::size_t n = 0;
    for (const auto& run : steps)
      for (const auto& s : run) n += s.disagreements;
    return n;
  }
  double disagreement_rate() const {
    const auto n = total_decisions();
    return n == 0 ? 0.0 : static_cast<double>(total_disagreements()) / static_cast<double>(n);
  }
};

/// Runs the adaptive filter and re-decides every move with the full data.
inline std::vector<ReplayReport> run_replay_oracle(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto points = sweep_points(cfg);
  std::vector<ReplayReport> reports(points.size());
  for (std::size_t s = 0; s < points.size(); ++s) {
    reports[s].sweep_id = s;
    reports[s].cfg = points[s];
    reports[s].steps.resize(cfg.n_runs);
  }
  parallel_for(points.size() * cfg.n_runs, cfg.workers, [&](std::size_t j) {
    const std::size_t s = j / cfg.n_runs;
    const std::size_t r = j % cfg.n_runs;
    const std::uint64_t key = run_key(s, r);
    const Scenario sc = scenario_for_run(points[s], key);
    run_filter(points[s], sc, Algorithm::kAdaptive, key, &reports[s].steps[r]);
  });
  return reports;
}

inline constexpr const char* kReplayCsvHeader =
    "sweep_id,seed,step,decisions,disagreements,rate,params";

inline void write_replay_csv(std::ostream& os, const std::vector<ReplayReport>& reports) {
  os << kReplayCsvHeader << '\n';
  for (const auto& rep : reports) {
    const std::string params = rep.cfg.fingerprint();
    for (std::size_t r = 0; r < rep.steps.size(); ++r) {
      for (std::size_t k = 0; k < rep.steps[r].size(); ++k) {
        const auto& st = rep.steps[r][k];
        const double rate = st.decisions == 0 ? 0.0
                                               : static_cast<double>(st.disagreements) /
                                                     static_cast<double>(st.decisions);
        os << rep.sweep_id << ',' << r << ',' << k << ',' << st.decisions << ','
           << st.disagreements << ',' << format_double(rate) << ',' << params << '\n';
      }
    }
    os << rep.sweep_id << ",all,all," << rep.total_decisions() << ','
       << rep.total_disagreements() << ',' << format_double(rep.disagreement_rate()) << ','
       << params << '\n';
  }
}

}  // namespace ssmcmc
