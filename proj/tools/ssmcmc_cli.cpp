// Command-line experiment runner.
//
//   ssmcmc run      --config cfg [--mode standard|adaptive|paired|replay-oracle]
//   ssmcmc sweep    --config cfg      (one result table across all sweep points)
//   ssmcmc replay   --config cfg      (full-data re-check of adaptive decisions)
//   ssmcmc scenario --config cfg --run i   (dump one generated scenario)
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include "ssmcmc/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out_path;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> n_runs;
  bool timing = false;
  std::size_t run_index = 0;
  std::string scenario_path;
};

ssmcmc::ExperimentConfig load_config(const Options& opt) {
  ssmcmc::ExperimentConfig cfg;
  if (!opt.config_path.empty()) {
    std::ifstream in(opt.config_path);
    if (!in) throw ssmcmc::ConfigError("--config", "cannot open '" + opt.config_path + "'");
    cfg = ssmcmc::parse_config(in);
  }
  if (opt.seed) cfg.master_seed = *opt.seed;
  if (!opt.mode.empty()) cfg.mode = ssmcmc::parse_mode(opt.mode);
  if (opt.workers) cfg.workers = *opt.workers;
  if (opt.n_runs) cfg.n_runs = *opt.n_runs;
  if (opt.timing) cfg.timing = true;
  cfg.validate();
  return cfg;
}

/// Writes to --out, or stdout when no path is given.
template <class Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output '" + path + "'");
  fn(out);
}

void print_replay_summary(const std::vector<ssmcmc::ReplayReport>& reports) {
  for (const auto& r : reports) {
    std::cerr << "sweep " << r.sweep_id << ": " << r.total_disagreements() << " / "
              << r.total_decisions() << " decisions disagree with the full-data test (rate "
              << r.disagreement_rate() << ")\n";
  }
}

int run_replay(const ssmcmc::ExperimentConfig& cfg, const Options& opt) {
  const auto reports = ssmcmc::run_replay_oracle(cfg);
  with_output(opt.out_path, [&](std::ostream& os) { ssmcmc::write_replay_csv(os, reports); });
  print_replay_summary(reports);
  return 0;
}

int run_on_loaded_scenario(ssmcmc::ExperimentConfig cfg, const Options& opt) {
  std::ifstream in(opt.scenario_path);
  if (!in) throw ssmcmc::ConfigError("--scenario", "cannot open '" + opt.scenario_path + "'");
  const ssmcmc::Scenario sc = ssmcmc::read_scenario(in);
  cfg.t_steps = sc.steps();
  cfg.n_runs = 1;
  cfg.sweep.clear();
  ssmcmc::SweepPointResult res;
  res.cfg = cfg;
  for (auto a : ssmcmc::algorithms_for(cfg.mode))
    res.runs[a].push_back(ssmcmc::run_filter(cfg, sc, a, ssmcmc::run_key(0, opt.run_index)));
  with_output(opt.out_path,
              [&](std::ostream& os) { ssmcmc::write_results_csv(os, {res}, cfg.timing); });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential MCMC target tracking with adaptive measurement subsampling"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "key=value configuration file");
    sub->add_option("--seed", opt.seed, "master seed (overrides run.seed)");
    sub->add_option("--out", opt.out_path, "output path (default stdout)");
    sub->add_option("--workers", opt.workers, "worker threads");
    sub->add_option("--runs", opt.n_runs, "independent runs (overrides run.n_runs)");
  };

  auto* run = app.add_subcommand("run", "run the base configuration");
  add_common(run);
  run->add_option("--mode", opt.mode, "standard|adaptive|paired|replay-oracle")
      ->check(CLI::IsMember({"standard", "adaptive", "paired", "replay-oracle"}));
  run->add_flag("--timing", opt.timing, "fill the wall_ms column");
  run->add_option("--scenario", opt.scenario_path, "filter a scenario file instead of simulating");

  auto* sweep = app.add_subcommand("sweep", "run every sweep point of the configuration");
  add_common(sweep);
  sweep->add_option("--mode", opt.mode, "standard|adaptive|paired")
      ->check(CLI::IsMember({"standard", "adaptive", "paired"}));
  sweep->add_flag("--timing", opt.timing, "fill the wall_ms column");

  auto* replay = app.add_subcommand("replay", "replay-oracle check of the subsampled decisions");
  add_common(replay);

  auto* scenario = app.add_subcommand("scenario", "write one generated scenario");
  add_common(scenario);
  scenario->add_option("--run", opt.run_index, "run index within the base configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    ssmcmc::ExperimentConfig cfg = load_config(opt);
    if (app.got_subcommand(replay)) {
      cfg.mode = ssmcmc::Mode::kReplayOracle;
      return run_replay(cfg, opt);
    }
    if (app.got_subcommand(scenario)) {
      const auto sc = ssmcmc::scenario_for_run(cfg, ssmcmc::run_key(0, opt.run_index));
      with_output(opt.out_path, [&](std::ostream& os) { ssmcmc::write_scenario(os, sc); });
      return 0;
    }
    if (app.got_subcommand(sweep)) {
      if (cfg.sweep.empty()) throw ssmcmc::ConfigError("sweep", "configuration has no sweep points");
      if (cfg.mode == ssmcmc::Mode::kReplayOracle)
        throw ssmcmc::ConfigError("run.mode", "use the replay subcommand");
    } else {
      cfg.sweep.clear();
      if (cfg.mode == ssmcmc::Mode::kReplayOracle) return run_replay(cfg, opt);
      if (!opt.scenario_path.empty()) return run_on_loaded_scenario(cfg, opt);
    }
    const auto results = ssmcmc::run_experiment(cfg);
    with_output(opt.out_path,
                [&](std::ostream& os) { ssmcmc::write_results_csv(os, results, cfg.timing); });
    for (const auto& sp : results) {
      for (const auto& [alg, runs] : sp.runs) {
        const auto per_step = sp.rmse_per_step(alg);
        double mean = 0.0;
        for (double v : per_step) mean += v;
        std::cerr << "sweep " << sp.sweep_id << " " << ssmcmc::to_string(alg)
                  << ": mean RMSE " << mean / static_cast<double>(per_step.size());
        if (alg == ssmcmc::Algorithm::kAdaptive) std::cerr << ", D " << sp.mean_d();
        std::cerr << '\n';
      }
    }
    return 0;
  } catch (const ssmcmc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
