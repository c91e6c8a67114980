#ifndef SWITCHLAB_DESIGN_HPP
#define SWITCHLAB_DESIGN_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "switchlab/numerics.hpp"
#include "switchlab/population.hpp"
#include "switchlab/rng.hpp"

// Assignment policies: complete randomization, sequentially-rerandomized
// assignment (accept a candidate when the Mahalanobis imbalance of the
// balancing variables is below a threshold), and the blocked variant that
// rerandomizes within strata defined by the previous period's treatment.

namespace switchlab {

/// Read-only window onto the information available when assigning
/// treatment at period t: covariates through t, outcomes through t-1.
/// Out-of-window access throws, which doubles as a measurability tripwire
/// for balance-spec implementations.
class HistoryView {
 public:
  HistoryView(const Matrix& covariates, const Matrix& outcomes, int n_units, int period,
              bool has_covariate)
      : x_(covariates), y_(outcomes), n_(n_units), t_(period), has_cov_(has_covariate) {}

  int n_units() const { return n_; }
  int period() const { return t_; }
  bool has_covariate() const { return has_cov_; }

  double x(int i, int s) const {
    if (s < 1 || s > t_)
      throw std::logic_error("HistoryView: covariate access outside [1, t]");
    return x_(i, s - 1);
  }

  double y(int i, int s) const {
    if (s < 1 || s >= t_)
      throw std::logic_error("HistoryView: outcome access outside [1, t-1]");
    return y_(i, s - 1);
  }

 private:
  const Matrix& x_;
  const Matrix& y_;
  int n_;
  int t_;
  bool has_cov_;
};

/// Recipe for the balancing variables H_{.,t}. build() may return fewer
/// columns than `dim` at early periods when requested lags do not exist
/// yet (zero columns means: fall back to complete randomization).
struct BalanceSpec {
  int dim = 0;
  std::function<Matrix(const HistoryView&)> build;
  nlohmann::json descriptor;  // enough to reconstruct for replay
};

/// H_{i,t} = (X_{i,t} [optional], Y_{i,t-1}, ..., Y_{i,t-n_lags});
/// lags that predate t=1 are dropped for that period.
inline BalanceSpec lagged_outcome_balance_spec(bool include_covariate, int n_lags) {
  if (n_lags < 1) throw std::invalid_argument("lagged_outcome_balance_spec: n_lags >= 1");
  BalanceSpec spec;
  spec.dim = (include_covariate ? 1 : 0) + n_lags;
  spec.descriptor = {{"id", "lagged_outcome"},
                     {"include_covariate", include_covariate},
                     {"n_lags", n_lags}};
  spec.build = [include_covariate, n_lags](const HistoryView& h) {
    int t = h.period();
    int n = h.n_units();
    int n_avail_lags = std::min(n_lags, t - 1);
    bool use_cov = include_covariate && h.has_covariate();
    int d = (use_cov ? 1 : 0) + n_avail_lags;
    Matrix H(n, d);
    for (int i = 0; i < n; ++i) {
      int col = 0;
      if (use_cov) H(i, col++) = h.x(i, t);
      for (int lag = 1; lag <= n_avail_lags; ++lag) H(i, col++) = h.y(i, t - lag);
    }
    return H;
  };
  return spec;
}

/// H_{i,t} = (Y_{i,1}, ..., Y_{i,t-1}): balance every previously observed
/// outcome.
inline BalanceSpec all_past_outcomes_balance_spec() {
  BalanceSpec spec;
  spec.dim = 0;  // grows with t
  spec.descriptor = {{"id", "all_past_outcomes"}};
  spec.build = [](const HistoryView& h) {
    int t = h.period();
    int n = h.n_units();
    Matrix H(n, t - 1);
    for (int i = 0; i < n; ++i)
      for (int s = 1; s < t; ++s) H(i, s - 1) = h.y(i, s);
    return H;
  };
  return spec;
}

inline BalanceSpec balance_spec_from_descriptor(const nlohmann::json& j) {
  std::string id = j.at("id").get<std::string>();
  if (id == "lagged_outcome")
    return lagged_outcome_balance_spec(j.at("include_covariate").get<bool>(),
                                       j.at("n_lags").get<int>());
  if (id == "all_past_outcomes") return all_past_outcomes_balance_spec();
  throw std::invalid_argument("unknown balance spec id: " + id);
}

enum class DesignKind {
  CompleteRandomization,
  BlockedCompleteRandomization,
  Srsb,
  BlockedSrsb,
};

inline std::string to_string(DesignKind k) {
  switch (k) {
    case DesignKind::CompleteRandomization: return "cr";
    case DesignKind::BlockedCompleteRandomization: return "blocked_cr";
    case DesignKind::Srsb: return "srsb";
    case DesignKind::BlockedSrsb: return "blocked_srsb";
  }
  return "?";
}

inline DesignKind design_kind_from_string(const std::string& s) {
  if (s == "cr") return DesignKind::CompleteRandomization;
  if (s == "blocked_cr") return DesignKind::BlockedCompleteRandomization;
  if (s == "srsb") return DesignKind::Srsb;
  if (s == "blocked_srsb") return DesignKind::BlockedSrsb;
  throw std::invalid_argument("unknown design kind: " + s);
}

enum class Period1Rule { CompleteRandomization, Rerandomize };

using DistanceFn = std::function<double(const std::vector<double>&, const SymmetricMatrix&)>;

inline double l2_distance(const std::vector<double>& theta, const SymmetricMatrix&) {
  double s = 0.0;
  for (double v : theta) s += v * v;
  return s;
}

struct DesignPolicy {
  DesignKind kind = DesignKind::CompleteRandomization;
  double threshold = std::numeric_limits<double>::infinity();
  int max_draws = 10000;
  BalanceSpec balance;
  Period1Rule period1 = Period1Rule::CompleteRandomization;
  std::string distance_id = "mahalanobis";  // or "l2"

  DistanceFn distance_fn() const {
    if (distance_id == "l2") return l2_distance;
    return [](const std::vector<double>& th, const SymmetricMatrix& s) {
      return mahalanobis(th, s);
    };
  }

  bool rerandomizes() const {
    return kind == DesignKind::Srsb || kind == DesignKind::BlockedSrsb;
  }
  bool blocked() const {
    return kind == DesignKind::BlockedCompleteRandomization || kind == DesignKind::BlockedSrsb;
  }

  nlohmann::json descriptor() const {
    nlohmann::json j;
    j["kind"] = to_string(kind);
    j["threshold"] = std::isfinite(threshold) ? nlohmann::json(threshold) : nlohmann::json("inf");
    j["max_draws"] = max_draws;
    j["period1"] = (period1 == Period1Rule::Rerandomize) ? "rerandomize" : "cr";
    j["distance"] = distance_id;
    if (rerandomizes()) j["balance"] = balance.descriptor;
    return j;
  }

  static DesignPolicy from_descriptor(const nlohmann::json& j) {
    DesignPolicy p;
    p.kind = design_kind_from_string(j.at("kind").get<std::string>());
    if (j.at("threshold").is_string())
      p.threshold = std::numeric_limits<double>::infinity();
    else
      p.threshold = j.at("threshold").get<double>();
    p.max_draws = j.at("max_draws").get<int>();
    p.period1 = (j.at("period1").get<std::string>() == "rerandomize")
                    ? Period1Rule::Rerandomize
                    : Period1Rule::CompleteRandomization;
    p.distance_id = j.value("distance", "mahalanobis");
    if (p.rerandomizes()) p.balance = balance_spec_from_descriptor(j.at("balance"));
    return p;
  }
};

/// Uniform draw over the C(N, N/2) columns with exactly N/2 treated units.
inline std::vector<std::uint8_t> draw_complete_randomization(int n, RngStream& rng) {
  if (n < 2 || n % 2 != 0)
    throw std::invalid_argument("draw_complete_randomization: N must be even");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  // Partial Fisher-Yates: the first N/2 slots become the treated set.
  for (int i = 0; i < n / 2; ++i) {
    int j = i + static_cast<int>(rng.next_below(n - i));
    std::swap(idx[i], idx[j]);
  }
  std::vector<std::uint8_t> w(n, 0);
  for (int i = 0; i < n / 2; ++i) w[idx[i]] = 1;
  return w;
}

/// Treated-minus-control mean difference of the rows of H under w,
/// restricted to the given unit subset (scaled by 2/|subset|).
inline std::vector<double> imbalance_vector(const Matrix& H, std::span<const std::uint8_t> w,
                                            std::span<const int> units) {
  int d = H.cols;
  std::vector<double> theta(d, 0.0);
  for (int i : units) {
    double sign = w[i] ? 1.0 : -1.0;
    for (int j = 0; j < d; ++j) theta[j] += sign * H(i, j);
  }
  double scale = 2.0 / static_cast<double>(units.size());
  for (double& v : theta) v *= scale;
  return theta;
}

struct PeriodDraw {
  std::vector<std::uint8_t> column;
  double distance = 0.0;            // accepted distance (sum over blocks if blocked)
  double block_distance[2] = {0.0, 0.0};
  int draws = 1;
  bool fallback = false;
  bool rerandomized = false;
};

/// Algorithm-1-style rerandomization for one period: accept the first
/// candidate with distance < c, otherwise return the minimum-distance
/// candidate seen (fallback). Sigma is computed once per period.
inline PeriodDraw rerandomize_period(const Matrix& H, double c, int n_max, RngStream& rng,
                                     const DistanceFn& distance) {
  int n = H.rows;
  if (n_max < 1) throw std::invalid_argument("rerandomize_period: n_max >= 1");
  SymmetricMatrix sigma = scaled_covariance(H);
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;

  PeriodDraw out;
  out.rerandomized = true;
  double d_min = std::numeric_limits<double>::infinity();
  std::vector<std::uint8_t> w_min;
  bool always_accept = !std::isfinite(c);
  for (int m = 0; m < n_max; ++m) {
    auto w = draw_complete_randomization(n, rng);
    auto theta = imbalance_vector(H, w, all);
    double d = distance(theta, sigma);
    if (m == 0 || d < d_min) {
      d_min = d;
      w_min = w;
    }
    if (d < c || always_accept) {
      out.column = std::move(w);
      out.distance = d;
      out.draws = m + 1;
      return out;
    }
  }
  out.column = std::move(w_min);
  out.distance = d_min;
  out.draws = n_max;
  out.fallback = true;
  return out;
}

/// Blocked rerandomization (t >= 2): candidates treat exactly N/4 units
/// within each previous-treatment block; accept only when both blockwise
/// distances are below c; fallback minimizes the summed distance.
inline PeriodDraw blocked_rerandomize_period(const Matrix& H,
                                             std::span<const std::uint8_t> prev, double c,
                                             int n_max, RngStream& rng,
                                             const DistanceFn& distance) {
  int n = H.rows;
  if (n % 4 != 0) throw std::invalid_argument("blocked_rerandomize_period: N divisible by 4");
  std::vector<int> block[2];
  for (int i = 0; i < n; ++i) block[prev[i] ? 1 : 0].push_back(i);
  if (block[0].size() != block[1].size())
    throw std::invalid_argument("blocked_rerandomize_period: previous assignment unbalanced");
  int half = static_cast<int>(block[0].size()) / 2;

  bool do_balance = H.cols > 0;
  SymmetricMatrix sigma[2];
  if (do_balance) {
    for (int g = 0; g < 2; ++g) {
      Matrix hg(static_cast<int>(block[g].size()), H.cols);
      for (std::size_t r = 0; r < block[g].size(); ++r)
        for (int j = 0; j < H.cols; ++j) hg(static_cast<int>(r), j) = H(block[g][r], j);
      sigma[g] = scaled_covariance(hg);
    }
  }

  auto draw_candidate = [&](RngStream& s) {
    std::vector<std::uint8_t> w(n, 0);
    for (int g = 0; g < 2; ++g) {
      std::vector<int> idx = block[g];
      for (int i = 0; i < half; ++i) {
        int j = i + static_cast<int>(s.next_below(idx.size() - i));
        std::swap(idx[i], idx[j]);
      }
      for (int i = 0; i < half; ++i) w[idx[i]] = 1;
    }
    return w;
  };

  PeriodDraw out;
  out.rerandomized = do_balance;
  double d_min = std::numeric_limits<double>::infinity();
  std::vector<std::uint8_t> w_min;
  double dmin_block[2] = {0, 0};
  bool always_accept = !std::isfinite(c) || !do_balance;
  for (int m = 0; m < n_max; ++m) {
    auto w = draw_candidate(rng);
    double dg[2] = {0.0, 0.0};
    if (do_balance) {
      for (int g = 0; g < 2; ++g) {
        auto theta = imbalance_vector(H, w, block[g]);
        dg[g] = distance(theta, sigma[g]);
      }
    }
    double dsum = dg[0] + dg[1];
    if (m == 0 || dsum < d_min) {
      d_min = dsum;
      w_min = w;
      dmin_block[0] = dg[0];
      dmin_block[1] = dg[1];
    }
    if ((dg[0] < c && dg[1] < c) || always_accept) {
      out.column = std::move(w);
      out.distance = dsum;
      out.block_distance[0] = dg[0];
      out.block_distance[1] = dg[1];
      out.draws = m + 1;
      return out;
    }
  }
  out.column = std::move(w_min);
  out.distance = d_min;
  out.block_distance[0] = dmin_block[0];
  out.block_distance[1] = dmin_block[1];
  out.draws = n_max;
  out.fallback = true;
  return out;
}

struct PeriodDiagnostics {
  double distance = 0.0;
  int draws = 1;
  bool fallback = false;
  bool rerandomized = false;
};

/// One realized experiment: assignments, observed outcomes, covariates and
/// per-period diagnostics, plus the policy descriptor for exact replay.
struct ExperimentTrajectory {
  int n_units = 0;
  int n_periods = 0;
  bool has_covariate = false;
  CarryoverOrder regime = CarryoverOrder::None;
  std::vector<std::uint8_t> assign;  // N x T, row-major
  Matrix outcomes;                   // N x T
  Matrix covariates;                 // N x T
  std::vector<PeriodDiagnostics> periods;
  nlohmann::json policy_descriptor;

  std::uint8_t w(int i, int t) const {  // t is 1-based
    return assign[static_cast<std::size_t>(i) * n_periods + (t - 1)];
  }
  double y(int i, int t) const { return outcomes(i, t - 1); }

  int treated_count(int t) const {
    int s = 0;
    for (int i = 0; i < n_units; ++i) s += w(i, t);
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema"] = "switchlab.trajectory.v1";
    j["n_units"] = n_units;
    j["n_periods"] = n_periods;
    j["has_covariate"] = has_covariate;
    j["regime"] = to_string(regime);
    std::vector<std::string> rows(n_units);
    for (int i = 0; i < n_units; ++i) {
      std::string& r = rows[i];
      r.resize(n_periods);
      for (int t = 1; t <= n_periods; ++t) r[t - 1] = w(i, t) ? '1' : '0';
    }
    j["assignments"] = rows;
    j["outcomes"] = outcomes.data;
    j["covariates"] = covariates.data;
    nlohmann::json diags = nlohmann::json::array();
    for (const auto& p : periods)
      diags.push_back({{"distance", p.distance},
                       {"draws", p.draws},
                       {"fallback", p.fallback},
                       {"rerandomized", p.rerandomized}});
    j["periods"] = diags;
    j["policy"] = policy_descriptor;
    return j;
  }

  static ExperimentTrajectory from_json(const nlohmann::json& j) {
    if (j.at("schema").get<std::string>() != "switchlab.trajectory.v1")
      throw std::invalid_argument("trajectory: unknown schema");
    ExperimentTrajectory tr;
    tr.n_units = j.at("n_units").get<int>();
    tr.n_periods = j.at("n_periods").get<int>();
    tr.has_covariate = j.at("has_covariate").get<bool>();
    std::string regime = j.at("regime").get<std::string>();
    tr.regime = regime == "none" ? CarryoverOrder::None
                : regime == "first_order" ? CarryoverOrder::FirstOrder
                                          : CarryoverOrder::FullPath;
    auto rows = j.at("assignments").get<std::vector<std::string>>();
    tr.assign.assign(static_cast<std::size_t>(tr.n_units) * tr.n_periods, 0);
    for (int i = 0; i < tr.n_units; ++i)
      for (int t = 0; t < tr.n_periods; ++t)
        tr.assign[static_cast<std::size_t>(i) * tr.n_periods + t] = rows[i][t] == '1';
    tr.outcomes = Matrix(tr.n_units, tr.n_periods);
    tr.outcomes.data = j.at("outcomes").get<std::vector<double>>();
    tr.covariates = Matrix(tr.n_units, tr.n_periods);
    tr.covariates.data = j.at("covariates").get<std::vector<double>>();
    for (const auto& d : j.at("periods")) {
      PeriodDiagnostics p;
      p.distance = d.at("distance").get<double>();
      p.draws = d.at("draws").get<int>();
      p.fallback = d.at("fallback").get<bool>();
      p.rerandomized = d.at("rerandomized").get<bool>();
      tr.periods.push_back(p);
    }
    tr.policy_descriptor = j.at("policy");
    return tr;
  }
};

/// Run the full sequential experiment: at each period build the balancing
/// variables from information through t-1 (covariates through t), draw the
/// assignment per the policy, then observe outcomes from the oracle.
inline ExperimentTrajectory run_experiment(const PotentialOutcomeOracle& oracle,
                                           const DesignPolicy& policy, RngStream rng) {
  int n = oracle.n_units;
  int T = oracle.n_periods;
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("run_experiment: N must be even");
  if (policy.blocked() && n % 4 != 0)
    throw std::invalid_argument("run_experiment: blocked designs need N divisible by 4");
  if (policy.rerandomizes() && !policy.balance.build)
    throw std::invalid_argument("run_experiment: SRSB policies require a balance spec");

  ExperimentTrajectory tr;
  tr.n_units = n;
  tr.n_periods = T;
  tr.has_covariate = oracle.has_covariate;
  tr.regime = oracle.order;
  tr.covariates = oracle.covariates;
  tr.outcomes = Matrix(n, T);
  tr.assign.assign(static_cast<std::size_t>(n) * T, 0);
  tr.periods.resize(T);
  tr.policy_descriptor = policy.descriptor();

  DistanceFn distance = policy.distance_fn();
  std::vector<std::uint8_t> path;  // scratch for oracle queries
  std::vector<std::uint8_t> prev;

  for (int t = 1; t <= T; ++t) {
    Matrix H(n, 0);
    if (policy.rerandomizes()) {
      HistoryView view(tr.covariates, tr.outcomes, n, t, tr.has_covariate);
      H = policy.balance.build(view);
      if (H.rows != n) throw std::logic_error("balance spec returned wrong row count");
    }

    PeriodDraw draw;
    bool blocked_now = policy.blocked() && t >= 2;
    if (blocked_now) {
      if (policy.kind == DesignKind::BlockedSrsb && H.cols > 0) {
        draw = blocked_rerandomize_period(H, prev, policy.threshold, policy.max_draws, rng,
                                          distance);
      } else {
        draw = blocked_rerandomize_period(Matrix(n, 0), prev,
                                          std::numeric_limits<double>::infinity(), 1, rng,
                                          distance);
      }
    } else {
      bool rerand_now =
          (policy.kind == DesignKind::Srsb ||
           (policy.kind == DesignKind::BlockedSrsb && policy.period1 == Period1Rule::Rerandomize)) &&
          H.cols > 0;
      if (rerand_now) {
        draw = rerandomize_period(H, policy.threshold, policy.max_draws, rng, distance);
      } else {
        draw.column = draw_complete_randomization(n, rng);
      }
    }

    for (int i = 0; i < n; ++i)
      tr.assign[static_cast<std::size_t>(i) * T + (t - 1)] = draw.column[i];
    tr.periods[t - 1] = {draw.distance, draw.draws, draw.fallback, draw.rerandomized};

    for (int i = 0; i < n; ++i) {
      path.clear();
      for (int s = 1; s <= t; ++s) path.push_back(tr.w(i, s));
      tr.outcomes(i, t - 1) = oracle.outcome(i, t, path);
    }
    prev = std::move(draw.column);
  }
  return tr;
}

}  // namespace switchlab

#endif  // SWITCHLAB_DESIGN_HPP
