#ifndef SWITCHLAB_INFER_HPP
#define SWITCHLAB_INFER_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "switchlab/design.hpp"
#include "switchlab/estimate.hpp"
#include "switchlab/parallel.hpp"
#include "switchlab/population.hpp"
#include "switchlab/rng.hpp"

// Finite-sample randomization inference for the sharp null of a constant
// additive effect, and confidence sets by test inversion. Carryover
// trajectories are rejected: with four potential outcomes per unit-period
// the sharp null no longer point-identifies the counterfactual table.

namespace switchlab {

struct SharpNull {
  double delta = 0.0;
};

struct ImputedTable {
  Matrix y0, y1;
};

/// Impute the full potential-outcome table under H_0(delta):
/// Y(0) = Y - delta*W, Y(1) = Y + delta*(1-W).
inline ImputedTable impute_sharp_null(const ExperimentTrajectory& tr, double delta) {
  if (tr.regime != CarryoverOrder::None)
    throw std::invalid_argument(
        "impute_sharp_null: randomization inference requires a no-carryover trajectory; "
        "the constant-additive sharp null does not identify four-way potential outcomes");
  int n = tr.n_units, T = tr.n_periods;
  ImputedTable table{Matrix(n, T), Matrix(n, T)};
  for (int i = 0; i < n; ++i) {
    for (int t = 1; t <= T; ++t) {
      double y = tr.y(i, t);
      bool w = tr.w(i, t);
      table.y0(i, t - 1) = y - delta * w;
      table.y1(i, t - 1) = y + delta * (1 - w);
    }
  }
  return table;
}

struct RIResult {
  double observed = 0.0;  // |tau_hat|
  int draws = 0;
  std::vector<double> simulated;  // |tau_hat^(m)|, replicate order
  double p_value = 1.0;
  bool two_sided = true;

  nlohmann::json to_json() const {
    return {{"observed", observed},
            {"draws", draws},
            {"simulated", simulated},
            {"p_value", p_value},
            {"two_sided", two_sided}};
  }
};

struct RIOptions {
  bool two_sided = true;  // one-sided variant tests tau_hat^(m) >= tau_hat
};

/// Monte Carlo p-value for H_0(delta): replay the full sequential design
/// on the imputed table M times (balancing variables rebuilt from each
/// replicate's own simulated history) and compare |tau_hat^(m)| with the
/// observed statistic. p = (1 + #{|tau^(m)| >= |tau|}) / (1 + M).
inline RIResult randomization_pvalue(const ExperimentTrajectory& tr, double delta,
                                     const DesignPolicy& policy, int M, RngStream base_stream) {
  if (M < 1) throw std::invalid_argument("randomization_pvalue: M >= 1");
  ImputedTable table = impute_sharp_null(tr, delta);

  PotentialOutcomeOracle null_oracle;
  null_oracle.n_units = tr.n_units;
  null_oracle.n_periods = tr.n_periods;
  null_oracle.order = CarryoverOrder::None;
  null_oracle.has_covariate = tr.has_covariate;
  null_oracle.covariates = tr.covariates;
  null_oracle.y0 = table.y0;
  null_oracle.y1 = table.y1;

  RIResult res;
  std::uint64_t replicate_root = base_stream.next_u64();
  PeriodEstimates observed = sate_no_carryover(tr);
  res.observed = std::fabs(observed.tau_hat);
  res.draws = M;
  res.simulated.resize(M);

  parallel_for(M, [&](int m) {
    RngStream stream = RngStream::derive(replicate_root, {static_cast<std::uint64_t>(m)});
    ExperimentTrajectory replay = run_experiment(null_oracle, policy, stream);
    res.simulated[m] = sate_no_carryover(replay).tau_hat;
  });

  int exceed = 0;
  for (double& s : res.simulated) {
    s = std::fabs(s);
    if (s >= res.observed) ++exceed;
  }
  res.p_value = (1.0 + exceed) / (1.0 + M);
  return res;
}

inline RIResult randomization_pvalue_signed(const ExperimentTrajectory& tr, double delta,
                                            const DesignPolicy& policy, int M,
                                            RngStream base_stream, const RIOptions& opt) {
  if (opt.two_sided) return randomization_pvalue(tr, delta, policy, M, base_stream);
  // One-sided: keep the signed statistics and count upper-tail exceedances.
  if (M < 1) throw std::invalid_argument("randomization_pvalue: M >= 1");
  ImputedTable table = impute_sharp_null(tr, delta);
  PotentialOutcomeOracle null_oracle;
  null_oracle.n_units = tr.n_units;
  null_oracle.n_periods = tr.n_periods;
  null_oracle.order = CarryoverOrder::None;
  null_oracle.has_covariate = tr.has_covariate;
  null_oracle.covariates = tr.covariates;
  null_oracle.y0 = table.y0;
  null_oracle.y1 = table.y1;

  RIResult res;
  res.two_sided = false;
  std::uint64_t replicate_root = base_stream.next_u64();
  res.observed = sate_no_carryover(tr).tau_hat;
  res.draws = M;
  res.simulated.resize(M);
  parallel_for(M, [&](int m) {
    RngStream stream = RngStream::derive(replicate_root, {static_cast<std::uint64_t>(m)});
    ExperimentTrajectory replay = run_experiment(null_oracle, policy, stream);
    res.simulated[m] = sate_no_carryover(replay).tau_hat;
  });
  int exceed = 0;
  for (double s : res.simulated)
    if (s >= res.observed) ++exceed;
  res.p_value = (1.0 + exceed) / (1.0 + M);
  return res;
}

/// Confidence set by test inversion: the grid points whose sharp null is
/// not rejected at level alpha.
inline std::vector<double> invert_test(const ExperimentTrajectory& tr, const DesignPolicy& policy,
                                       const std::vector<double>& delta_grid, double alpha, int M,
                                       RngStream base_stream) {
  if (delta_grid.empty()) throw std::invalid_argument("invert_test: grid must be nonempty");
  std::vector<double> retained;
  std::uint64_t root = base_stream.next_u64();
  for (std::size_t k = 0; k < delta_grid.size(); ++k) {
    RngStream s = RngStream::derive(root, {static_cast<std::uint64_t>(k)});
    RIResult r = randomization_pvalue(tr, delta_grid[k], policy, M, s);
    if (r.p_value > alpha) retained.push_back(delta_grid[k]);
  }
  return retained;
}

}  // namespace switchlab

#endif  // SWITCHLAB_INFER_HPP
