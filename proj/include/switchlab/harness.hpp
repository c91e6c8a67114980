#ifndef SWITCHLAB_HARNESS_HPP
#define SWITCHLAB_HARNESS_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "switchlab/design.hpp"
#include "switchlab/estimate.hpp"
#include "switchlab/parallel.hpp"
#include "switchlab/population.hpp"
#include "switchlab/rng.hpp"

// Scenario configuration, seeded parallel replication runner, summary
// statistics, and file emission for the simulation grids.

namespace switchlab {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class GridAxis { N, T, Rho, Tau };

inline std::string to_string(GridAxis a) {
  switch (a) {
    case GridAxis::N: return "N";
    case GridAxis::T: return "T";
    case GridAxis::Rho: return "rho";
    case GridAxis::Tau: return "tau";
  }
  return "?";
}

struct DgpConfig {
  std::string id;        // ar1_no_carryover | ar1_first_order |
                         // heterogeneous_carryover | factor_no_carryover |
                         // factor_first_order | markov_latent
  double rho = 1.0;      // rho_x for AR(1); state persistence for markov
  double tau = 0.5;      // factor-model effect size
  FactorModelParams factor;
  double markov_shock_sd = 0.4;
};

struct ScenarioConfig {
  std::string scenario;
  DgpConfig dgp;
  std::vector<DesignKind> designs;
  GridAxis axis = GridAxis::N;
  std::vector<double> axis_values;
  int n_units = 200;
  int n_periods = 20;
  int replications = 500;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double threshold_alpha = 0.01;
  int max_draws = 10000;
  bool balance_include_covariate = true;
  int balance_n_lags = 1;
  int block_size = 8;
  double ci_level = 0.95;
  int ri_draws = 199;
  bool redraw_population_per_replicate = false;
  std::string csv_path, json_path, details_path;
};

inline bool dgp_has_covariate(const std::string& id) {
  return id == "ar1_no_carryover" || id == "ar1_first_order" || id == "heterogeneous_carryover";
}

inline bool dgp_known(const std::string& id) {
  return dgp_has_covariate(id) || id == "factor_no_carryover" || id == "factor_first_order" ||
         id == "markov_latent";
}

inline ScenarioConfig parse_scenario_config(const nlohmann::json& j) {
  ScenarioConfig c;
  auto require = [&](const char* field) -> const nlohmann::json& {
    if (!j.contains(field)) throw ConfigError(std::string("config: missing field '") + field + "'");
    return j.at(field);
  };
  c.scenario = require("scenario").get<std::string>();

  const auto& dgp = require("dgp");
  if (!dgp.contains("id")) throw ConfigError("config: missing field 'dgp.id'");
  c.dgp.id = dgp.at("id").get<std::string>();
  if (!dgp_known(c.dgp.id)) throw ConfigError("config: unknown 'dgp.id' value '" + c.dgp.id + "'");
  c.dgp.rho = dgp.value("rho", c.dgp.rho);
  c.dgp.tau = dgp.value("tau", c.dgp.tau);
  c.dgp.markov_shock_sd = dgp.value("shock_sd", c.dgp.markov_shock_sd);
  if (dgp.contains("factor")) {
    const auto& f = dgp.at("factor");
    c.dgp.factor.n_factors = f.value("n_factors", 2);
    c.dgp.factor.ar2_coeff1 = f.value("ar2_coeff1", 0.5);
    c.dgp.factor.ar2_coeff2 = f.value("ar2_coeff2", 0.2);
    c.dgp.factor.innovation_sd = f.value("innovation_sd", 0.1);
  }

  for (const auto& d : require("designs"))
    c.designs.push_back(design_kind_from_string(d.get<std::string>()));
  if (c.designs.empty()) throw ConfigError("config: 'designs' must be nonempty");

  const auto& axis = require("axis");
  std::string an = axis.at("name").get<std::string>();
  if (an == "N") c.axis = GridAxis::N;
  else if (an == "T") c.axis = GridAxis::T;
  else if (an == "rho") c.axis = GridAxis::Rho;
  else if (an == "tau") c.axis = GridAxis::Tau;
  else throw ConfigError("config: 'axis.name' must be one of N, T, rho, tau");
  c.axis_values = axis.at("values").get<std::vector<double>>();
  if (c.axis_values.empty()) throw ConfigError("config: 'axis.values' must be nonempty");

  c.n_units = j.value("n_units", c.n_units);
  c.n_periods = j.value("n_periods", c.n_periods);
  c.replications = j.value("replications", 500);
  if (j.contains("seed")) {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.seed_set = true;
  }
  c.threshold_alpha = j.value("threshold_alpha", 0.01);
  c.max_draws = j.value("max_draws", 10000);
  if (j.contains("balance")) {
    const auto& b = j.at("balance");
    c.balance_include_covariate = b.value("include_covariate", true);
    c.balance_n_lags = b.value("n_lags", 1);
  }
  if (j.contains("inference")) {
    const auto& inf = j.at("inference");
    c.block_size = inf.value("block_size", 8);
    c.ci_level = inf.value("ci_level", 0.95);
    c.ri_draws = inf.value("ri_draws", 199);
  }
  c.redraw_population_per_replicate = j.value("redraw_population_per_replicate", false);
  if (j.contains("output")) {
    const auto& o = j.at("output");
    if (o.contains("csv") && !o.at("csv").is_null()) c.csv_path = o.at("csv").get<std::string>();
    if (o.contains("json") && !o.at("json").is_null()) c.json_path = o.at("json").get<std::string>();
    if (o.contains("details") && !o.at("details").is_null())
      c.details_path = o.at("details").get<std::string>();
  }
  return c;
}

inline void validate_scenario_config(const ScenarioConfig& c) {
  bool blocked = false;
  for (auto k : c.designs)
    if (k == DesignKind::BlockedCompleteRandomization || k == DesignKind::BlockedSrsb)
      blocked = true;
  auto check_n = [&](int n, const std::string& where) {
    if (n < 2 || n % 2 != 0) throw ConfigError("config: " + where + " must be even and >= 2");
    if (blocked && n % 4 != 0)
      throw ConfigError("config: " + where + " must be divisible by 4 with a blocked design");
  };
  if (c.axis == GridAxis::N) {
    for (double v : c.axis_values) check_n(static_cast<int>(v), "axis.values (N)");
  } else {
    check_n(c.n_units, "n_units");
  }
  if (c.axis == GridAxis::T) {
    for (double v : c.axis_values)
      if (v < 2) throw ConfigError("config: axis.values (T) must be >= 2");
  } else if (c.n_periods < 1) {
    throw ConfigError("config: n_periods must be >= 1");
  }
  if (c.replications < 1) throw ConfigError("config: replications must be >= 1");
  if (!(c.threshold_alpha > 0.0 && c.threshold_alpha < 1.0))
    throw ConfigError("config: threshold_alpha must be in (0,1)");
  if (c.max_draws < 1) throw ConfigError("config: max_draws must be >= 1");
  if (c.balance_n_lags < 1) throw ConfigError("config: balance.n_lags must be >= 1");
  if (c.block_size < 2) throw ConfigError("config: inference.block_size must be >= 2");
  if (!(c.ci_level > 0.0 && c.ci_level < 1.0))
    throw ConfigError("config: inference.ci_level must be in (0,1)");
  if (!c.seed_set) throw ConfigError("config: 'seed' is required");
}

inline PopulationBundle build_population(const DgpConfig& dgp, int N, int T, double rho, double tau,
                                         std::uint64_t seed) {
  if (dgp.id == "ar1_no_carryover") return make_ar1_no_carryover(N, T, rho, seed);
  if (dgp.id == "ar1_first_order") return make_ar1_first_order_carryover(N, T, seed);
  if (dgp.id == "heterogeneous_carryover") return make_heterogeneous_carryover(N, T, seed);
  if (dgp.id == "factor_no_carryover")
    return make_synthetic_factor_model(N, T, tau, CarryoverOrder::None, seed, dgp.factor);
  if (dgp.id == "factor_first_order")
    return make_synthetic_factor_model(N, T, tau, CarryoverOrder::FirstOrder, seed, dgp.factor);
  if (dgp.id == "markov_latent")
    return make_markov_latent_carryover(N, T, rho, seed, dgp.factor, dgp.markov_shock_sd);
  throw ConfigError("unknown dgp id: " + dgp.id);
}

inline DesignPolicy build_policy(const ScenarioConfig& c, DesignKind kind, bool has_covariate) {
  DesignPolicy p;
  p.kind = kind;
  p.max_draws = c.max_draws;
  if (p.rerandomizes()) {
    bool use_cov = c.balance_include_covariate && has_covariate;
    p.balance = lagged_outcome_balance_spec(c.balance_include_covariate, c.balance_n_lags);
    int d = (use_cov ? 1 : 0) + c.balance_n_lags;
    p.threshold = chi2_quantile(c.threshold_alpha, d);
  }
  return p;
}

struct SummaryRow {
  std::string scenario;
  std::string design;
  std::string axis;
  double axis_value = 0.0;
  double bias = 0.0;
  double variance = 0.0;
  double rmse = 0.0;
  double ci_length = 0.0;
  double coverage = 0.0;
  double fallback_rate = 0.0;
  double mean_draws = 0.0;
  double seconds = 0.0;
  // extras (not part of the CSV contract)
  double rmse_se = 0.0;       // MC standard error of the RMSE (delta method)
  double tau_hat_se = 0.0;    // sd of tau_hat across replicates / sqrt(M)
  double tau_bar = 0.0;
  std::uint64_t oracle_hash = 0;

  nlohmann::json to_json() const {
    return {{"scenario", scenario}, {"design", design},       {"axis", axis},
            {"axis_value", axis_value}, {"bias", bias},       {"variance", variance},
            {"rmse", rmse},         {"ci_length", ci_length}, {"coverage", coverage},
            {"fallback_rate", fallback_rate}, {"mean_draws", mean_draws},
            {"seconds", seconds},   {"rmse_se", rmse_se},     {"tau_hat_se", tau_hat_se},
            {"tau_bar", tau_bar},   {"oracle_hash", oracle_hash}};
  }
};

struct ReplicationDetail {
  double tau_hat = 0.0;
  double tau_bar = 0.0;  // estimand of this replicate's population
  double ci_lo = 0.0, ci_hi = 0.0;
  int fallbacks = 0;
  double mean_draws = 0.0;
};

struct ScenarioResult {
  std::vector<SummaryRow> rows;
  // details[row index][replicate index]; filled only when requested
  std::vector<std::vector<ReplicationDetail>> details;
};

inline ScenarioResult run_scenario(const ScenarioConfig& c, bool keep_details = false) {
  validate_scenario_config(c);
  ScenarioResult result;

  for (std::size_t g = 0; g < c.axis_values.size(); ++g) {
    int N = c.n_units, T = c.n_periods;
    double rho = c.dgp.rho, tau = c.dgp.tau;
    switch (c.axis) {
      case GridAxis::N: N = static_cast<int>(c.axis_values[g]); break;
      case GridAxis::T: T = static_cast<int>(c.axis_values[g]); break;
      case GridAxis::Rho: rho = c.axis_values[g]; break;
      case GridAxis::Tau: tau = c.axis_values[g]; break;
    }

    // One fixed population per grid point per master seed, shared by all
    // designs and replications.
    std::uint64_t pop_seed = derive_key(c.seed, {0x706F70, g});
    PopulationBundle shared;
    if (!c.redraw_population_per_replicate)
      shared = build_population(c.dgp, N, T, rho, tau, pop_seed);

    for (std::size_t di = 0; di < c.designs.size(); ++di) {
      DesignKind kind = c.designs[di];
      auto t0 = std::chrono::steady_clock::now();

      int M = c.replications;
      std::vector<ReplicationDetail> reps(M);
      std::vector<double> errors(M);
      parallel_for(M, [&](int r) {
        const PopulationBundle* pop = &shared;
        PopulationBundle own;
        if (c.redraw_population_per_replicate) {
          own = build_population(c.dgp, N, T, rho, tau,
                                 derive_key(pop_seed, {static_cast<std::uint64_t>(r)}));
          pop = &own;
        }
        DesignPolicy policy = build_policy(c, kind, pop->oracle.has_covariate);
        RngStream stream = RngStream::derive(
            c.seed, {0x726570, g, di, static_cast<std::uint64_t>(r)});
        ExperimentTrajectory tr = run_experiment(pop->oracle, policy, stream);

        PeriodEstimates est = (pop->oracle.order == CarryoverOrder::None)
                                  ? sate_no_carryover(tr)
                                  : sate_carryover(tr);
        ReplicationDetail& d = reps[r];
        d.tau_hat = est.tau_hat;
        d.tau_bar = pop->estimands.tau_bar;
        errors[r] = est.tau_hat - pop->estimands.tau_bar;
        if (T >= c.block_size) {
          VarianceReport vr = block_conservative_variance(est, c.block_size,
                                                          BlockPredictor::ScaledAverage, c.ci_level);
          d.ci_lo = vr.ci_lo;
          d.ci_hi = vr.ci_hi;
        } else {
          d.ci_lo = d.ci_hi = est.tau_hat;
        }
        int fb = 0;
        double draws = 0.0;
        for (const auto& p : tr.periods) {
          fb += p.fallback ? 1 : 0;
          draws += p.draws;
        }
        d.fallbacks = fb;
        d.mean_draws = draws / T;
      });

      auto t1 = std::chrono::steady_clock::now();

      SummaryRow row;
      row.scenario = c.scenario;
      row.design = to_string(kind);
      row.axis = to_string(c.axis);
      row.axis_value = c.axis_values[g];
      row.tau_bar = shared.oracle.n_units ? shared.estimands.tau_bar : 0.0;
      row.oracle_hash = shared.oracle.n_units ? shared.oracle.content_hash() : 0;

      double mean_err = 0.0;
      for (double e : errors) mean_err += e;
      mean_err /= M;
      double var = 0.0, mse = 0.0, m4 = 0.0;
      for (double e : errors) {
        var += (e - mean_err) * (e - mean_err);
        mse += e * e;
      }
      var /= M;
      mse /= M;
      for (double e : errors) m4 += (e * e - mse) * (e * e - mse);
      m4 /= M;
      row.bias = mean_err;
      row.variance = var;
      row.rmse = std::sqrt(mse);
      row.rmse_se = (row.rmse > 0.0) ? std::sqrt(m4 / M) / (2.0 * row.rmse) : 0.0;
      row.tau_hat_se = std::sqrt(var / M);

      double cov = 0.0, len = 0.0, fb = 0.0, dr = 0.0;
      for (const auto& d : reps) {
        cov += (d.ci_lo <= d.tau_bar && d.tau_bar <= d.ci_hi) ? 1.0 : 0.0;
        len += d.ci_hi - d.ci_lo;
        fb += d.fallbacks;
        dr += d.mean_draws;
      }
      row.coverage = cov / M;
      row.ci_length = len / M;
      row.fallback_rate = fb / (static_cast<double>(M) * T);
      row.mean_draws = dr / M;
      row.seconds = std::chrono::duration<double>(t1 - t0).count();

      result.rows.push_back(row);
      if (keep_details) result.details.push_back(std::move(reps));
    }
  }
  return result;
}

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// OLS on (log x, log y) pairs; needs >= 3 points and a non-degenerate x
/// grid.
inline SlopeFit slope_fit(const std::vector<double>& log_x, const std::vector<double>& log_y) {
  std::size_t n = log_x.size();
  if (n < 3 || log_y.size() != n)
    throw std::invalid_argument("slope_fit: need >= 3 (x, y) pairs");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += log_x[i];
    my += log_y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (log_x[i] - mx) * (log_x[i] - mx);
    sxy += (log_x[i] - mx) * (log_y[i] - my);
  }
  if (sxx <= 0.0) throw std::invalid_argument("slope_fit: degenerate grid");
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

inline const char* kCsvHeader =
    "scenario,design,axis,axis_value,bias,variance,rmse,ci_length,coverage,fallback_rate,"
    "mean_draws,seconds";

inline std::string to_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  out.precision(12);
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.design << ',' << r.axis << ',' << r.axis_value << ',' << r.bias
        << ',' << r.variance << ',' << r.rmse << ',' << r.ci_length << ',' << r.coverage << ','
        << r.fallback_rate << ',' << r.mean_draws << ',' << r.seconds << "\n";
  }
  return out.str();
}

inline nlohmann::json to_json(const std::vector<SummaryRow>& rows) {
  nlohmann::json j;
  j["schema"] = "switchlab.summary.v1";
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back(r.to_json());
  return j;
}

inline std::vector<SummaryRow> summary_from_json(const nlohmann::json& j) {
  if (j.at("schema").get<std::string>() != "switchlab.summary.v1")
    throw std::invalid_argument("summary: unknown schema");
  std::vector<SummaryRow> rows;
  for (const auto& e : j.at("rows")) {
    SummaryRow r;
    r.scenario = e.at("scenario").get<std::string>();
    r.design = e.at("design").get<std::string>();
    r.axis = e.at("axis").get<std::string>();
    r.axis_value = e.at("axis_value").get<double>();
    r.bias = e.at("bias").get<double>();
    r.variance = e.at("variance").get<double>();
    r.rmse = e.at("rmse").get<double>();
    r.ci_length = e.at("ci_length").get<double>();
    r.coverage = e.at("coverage").get<double>();
    r.fallback_rate = e.at("fallback_rate").get<double>();
    r.mean_draws = e.at("mean_draws").get<double>();
    r.seconds = e.at("seconds").get<double>();
    r.rmse_se = e.value("rmse_se", 0.0);
    r.tau_hat_se = e.value("tau_hat_se", 0.0);
    r.tau_bar = e.value("tau_bar", 0.0);
    r.oracle_hash = e.value("oracle_hash", std::uint64_t{0});
    rows.push_back(r);
  }
  return rows;
}

/// Atomic file write: write to <path>.tmp then rename.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

inline void emit_outputs(const ScenarioConfig& c, const ScenarioResult& result) {
  if (result.rows.empty()) throw std::runtime_error("emit_outputs: empty table");
  if (!c.csv_path.empty()) write_file_atomic(c.csv_path, to_csv(result.rows));
  if (!c.json_path.empty()) write_file_atomic(c.json_path, to_json(result.rows).dump(2) + "\n");
  if (!c.details_path.empty() && !result.details.empty()) {
    nlohmann::json j;
    j["schema"] = "switchlab.details.v1";
    j["rows"] = nlohmann::json::array();
    for (std::size_t k = 0; k < result.rows.size(); ++k) {
      nlohmann::json reps = nlohmann::json::array();
      for (const auto& d : result.details[k])
        reps.push_back({{"tau_hat", d.tau_hat},
                        {"ci_lo", d.ci_lo},
                        {"ci_hi", d.ci_hi},
                        {"fallbacks", d.fallbacks},
                        {"mean_draws", d.mean_draws}});
      j["rows"].push_back({{"design", result.rows[k].design},
                           {"axis_value", result.rows[k].axis_value},
                           {"replicates", reps}});
    }
    write_file_atomic(c.details_path, j.dump() + "\n");
  }
}

/// Parse the summary CSV back into rows (extras default to zero).
inline std::vector<SummaryRow> summary_from_csv(std::istream& in) {
  std::vector<SummaryRow> rows;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty input");
  if (line != kCsvHeader) throw std::runtime_error("csv: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 12) throw std::runtime_error("csv: malformed row: " + line);
    SummaryRow r;
    r.scenario = fields[0];
    r.design = fields[1];
    r.axis = fields[2];
    r.axis_value = std::stod(fields[3]);
    r.bias = std::stod(fields[4]);
    r.variance = std::stod(fields[5]);
    r.rmse = std::stod(fields[6]);
    r.ci_length = std::stod(fields[7]);
    r.coverage = std::stod(fields[8]);
    r.fallback_rate = std::stod(fields[9]);
    r.mean_draws = std::stod(fields[10]);
    r.seconds = std::stod(fields[11]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace switchlab

#endif  // SWITCHLAB_HARNESS_HPP
