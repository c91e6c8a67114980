// switchlab CLI: run simulation grids, randomization tests, trajectory
// replays, and convergence-slope fits.
//
// Exit codes: 0 success, 2 configuration error, 1 runtime error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "switchlab/design.hpp"
#include "switchlab/estimate.hpp"
#include "switchlab/harness.hpp"
#include "switchlab/infer.hpp"
#include "switchlab/population.hpp"
#include "switchlab/rng.hpp"

using namespace switchlab;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return j;
}

ExperimentTrajectory load_trajectory(const std::string& path) {
  try {
    return ExperimentTrajectory::from_json(load_json(path));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

int cmd_simulate(const std::string& config_path, std::uint64_t seed, bool seed_given,
                 const std::string& dump_trajectory, bool details) {
  json j = load_json(config_path);
  ScenarioConfig c = parse_scenario_config(j);
  if (seed_given) {
    c.seed = seed;
    c.seed_set = true;
  }
  validate_scenario_config(c);

  if (!dump_trajectory.empty()) {
    // One realized experiment at the first grid point / first design, for
    // later use with `infer` and `replay`.
    int N = c.n_units, T = c.n_periods;
    double rho = c.dgp.rho, tau = c.dgp.tau;
    switch (c.axis) {
      case GridAxis::N: N = static_cast<int>(c.axis_values[0]); break;
      case GridAxis::T: T = static_cast<int>(c.axis_values[0]); break;
      case GridAxis::Rho: rho = c.axis_values[0]; break;
      case GridAxis::Tau: tau = c.axis_values[0]; break;
    }
    auto pop = build_population(c.dgp, N, T, rho, tau, derive_key(c.seed, {0x706F70, 0}));
    DesignPolicy policy = build_policy(c, c.designs[0], pop.oracle.has_covariate);
    auto tr = run_experiment(pop.oracle, policy, RngStream::derive(c.seed, {0x726570, 0, 0, 0}));
    write_file_atomic(dump_trajectory, tr.to_json().dump(2) + "\n");
    std::cerr << "trajectory written to " << dump_trajectory << "\n";
  }

  auto result = run_scenario(c, details || !c.details_path.empty());
  emit_outputs(c, result);
  std::cout << to_csv(result.rows);
  return 0;
}

int cmd_infer(const std::string& traj_path, double delta, int draws, double alpha,
              std::uint64_t seed) {
  auto tr = load_trajectory(traj_path);
  DesignPolicy policy = DesignPolicy::from_descriptor(tr.policy_descriptor);
  RIResult res = randomization_pvalue(tr, delta, policy, draws, RngStream(seed));
  json out = res.to_json();
  out["delta"] = delta;
  out["alpha"] = alpha;
  out["reject"] = res.p_value <= alpha;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_replay(const std::string& traj_path, int block_size) {
  auto tr = load_trajectory(traj_path);
  PeriodEstimates est = (tr.regime == CarryoverOrder::None) ? sate_no_carryover(tr)
                                                            : sate_carryover(tr);
  json out;
  out["estimates"] = est.to_json();
  if (tr.n_periods >= block_size) {
    out["variance"] = block_conservative_variance(est, block_size).to_json();
  }
  json diags = json::array();
  for (const auto& p : tr.periods)
    diags.push_back({{"distance", p.distance},
                     {"draws", p.draws},
                     {"fallback", p.fallback},
                     {"rerandomized", p.rerandomized}});
  out["periods"] = diags;
  out["policy"] = tr.policy_descriptor;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_slope(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw ConfigError("cannot open: " + csv_path);
  std::vector<SummaryRow> rows;
  try {
    rows = summary_from_csv(in);
  } catch (const std::runtime_error& e) {
    throw ConfigError(csv_path + ": " + e.what());
  }
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_design;
  for (const auto& r : rows) {
    if (r.axis_value <= 0.0 || r.rmse <= 0.0)
      throw ConfigError("slope: axis values and RMSEs must be positive");
    auto& [lx, ly] = by_design[r.design];
    lx.push_back(std::log(r.axis_value));
    ly.push_back(std::log(r.rmse));
  }
  json out = json::array();
  for (auto& [design, xy] : by_design) {
    SlopeFit f;
    try {
      f = slope_fit(xy.first, xy.second);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("slope: ") + e.what());
    }
    out.push_back({{"design", design}, {"slope", f.slope}, {"intercept", f.intercept}});
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"switchback experiment simulation toolkit"};
  app.require_subcommand(1);

  std::string config_path, traj_path, csv_path, dump_trajectory;
  std::uint64_t seed = 0;
  bool details = false;
  double delta = 0.0, alpha = 0.05;
  int draws = 199, block_size = 8;

  auto* sim = app.add_subcommand("simulate", "run a scenario grid from a JSON config");
  sim->add_option("config", config_path, "scenario config (JSON)")->required();
  auto* seed_opt = sim->add_option("--seed", seed, "master seed (overrides config)");
  sim->add_option("--dump-trajectory", dump_trajectory,
                  "also write one realized trajectory (first grid point/design) to this path");
  sim->add_flag("--details", details, "keep per-replicate details (needs output.details)");

  auto* inf = app.add_subcommand("infer", "randomization test on a saved trajectory");
  inf->add_option("trajectory", traj_path, "trajectory JSON")->required();
  inf->add_option("--delta", delta, "sharp-null effect to test")->required();
  inf->add_option("--draws", draws, "Monte Carlo replays")->required();
  inf->add_option("--alpha", alpha, "decision level (default 0.05)");
  std::uint64_t infer_seed = 1;
  inf->add_option("--seed", infer_seed, "replay seed (default 1)");

  auto* rep = app.add_subcommand("replay", "recompute estimates from a saved trajectory");
  rep->add_option("trajectory", traj_path, "trajectory JSON")->required();
  rep->add_option("--block-size", block_size, "variance estimator block size (default 8)");

  auto* slo = app.add_subcommand("slope", "log-log RMSE slope per design from a summary CSV");
  slo->add_option("summary", csv_path, "summary CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed())
      return cmd_simulate(config_path, seed, seed_opt->count() > 0, dump_trajectory, details);
    if (inf->parsed()) return cmd_infer(traj_path, delta, draws, alpha, infer_seed);
    if (rep->parsed()) return cmd_replay(traj_path, block_size);
    if (slo->parsed()) return cmd_slope(csv_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
