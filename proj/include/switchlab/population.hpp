#ifndef SWITCHLAB_POPULATION_HPP
#define SWITCHLAB_POPULATION_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "switchlab/numerics.hpp"
#include "switchlab/rng.hpp"

// Fixed finite populations of potential outcomes. All stochastic
// ingredients are drawn once at construction from a seed and frozen, so
// the oracle is deterministic and all randomness downstream comes from
// the treatment assignment alone.

namespace switchlab {

enum class CarryoverOrder { None, FirstOrder, FullPath };

inline std::string to_string(CarryoverOrder o) {
  switch (o) {
    case CarryoverOrder::None: return "none";
    case CarryoverOrder::FirstOrder: return "first_order";
    case CarryoverOrder::FullPath: return "full_path";
  }
  return "?";
}

class PotentialOutcomeOracle {
 public:
  int n_units = 0;
  int n_periods = 0;
  CarryoverOrder order = CarryoverOrder::None;

  // Fixed covariates, N x T (one covariate per unit-period; all-zero when
  // the generating process has none).
  Matrix covariates;
  bool has_covariate = false;

  // order == None: y0, y1 are N x T.
  Matrix y0, y1;

  // order == FirstOrder: yy[prev][cur], each N x T. Period 1 reads prev = 0.
  Matrix yy[2][2];

  // order == FullPath (Markov latent state): frozen base outcomes and
  // shocks, plus the state persistence.
  Matrix ybase, state_shock, outcome_shock;
  double state_rho = 0.0;

  /// Outcome of unit i at period t (1-based) under the treatment-path
  /// prefix w_{i,1:t} (path.size() == t). Depends only on the coordinates
  /// allowed by the carryover order.
  double outcome(int i, int t, std::span<const std::uint8_t> path) const {
    if (i < 0 || i >= n_units || t < 1 || t > n_periods)
      throw std::out_of_range("oracle: unit/period out of range");
    if (static_cast<int>(path.size()) != t)
      throw std::invalid_argument("oracle: path prefix must have length t");
    switch (order) {
      case CarryoverOrder::None:
        return path[t - 1] ? y1(i, t - 1) : y0(i, t - 1);
      case CarryoverOrder::FirstOrder: {
        int prev = (t >= 2) ? path[t - 2] : 0;
        return yy[prev][path[t - 1]](i, t - 1);
      }
      case CarryoverOrder::FullPath: {
        double s = 0.0;  // S_{i,1} = 0
        for (int u = 2; u <= t; ++u)
          s = state_rho * s + path[u - 2] + state_shock(i, u - 1);
        double th = std::tanh(s);
        return ybase(i, t - 1) + 0.5 * th + 0.5 * path[t - 1] * th + outcome_shock(i, t - 1);
      }
    }
    throw std::logic_error("oracle: unknown carryover order");
  }

  double covariate(int i, int t) const { return covariates(i, t - 1); }

  nlohmann::json snapshot() const;
  static PotentialOutcomeOracle from_snapshot(const nlohmann::json& j);

  /// Content hash of the frozen arrays (grid-point sharing checks).
  std::uint64_t content_hash() const {
    std::uint64_t h = derive_key(0xC0FFEE, {static_cast<std::uint64_t>(n_units),
                                            static_cast<std::uint64_t>(n_periods),
                                            static_cast<std::uint64_t>(order)});
    auto fold = [&h](const Matrix& m) {
      for (double v : m.data) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        h = detail::mix64(h ^ bits);
      }
    };
    fold(covariates);
    fold(y0); fold(y1);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) fold(yy[a][b]);
    fold(ybase); fold(state_shock); fold(outcome_shock);
    return h;
  }
};

struct TrueEstimands {
  // Per-period effects: index t-1 for no-carryover (t = 1..T), index t-2
  // for first-order / full-path (t = 2..T).
  std::vector<double> tau_t;
  double tau_bar = 0.0;
};

struct PopulationBundle {
  PotentialOutcomeOracle oracle;
  TrueEstimands estimands;
  Matrix latent;  // rank-k component, populated by the factor-model builder
};

namespace stream_id {
inline constexpr std::uint64_t covariate = 1;
inline constexpr std::uint64_t ar_noise = 2;
inline constexpr std::uint64_t ar_init = 3;
inline constexpr std::uint64_t bernoulli1 = 4;
inline constexpr std::uint64_t bernoulli2 = 5;
inline constexpr std::uint64_t bernoulli3 = 6;
inline constexpr std::uint64_t factor_unit = 7;
inline constexpr std::uint64_t factor_time = 8;
inline constexpr std::uint64_t ar2_resid = 9;
inline constexpr std::uint64_t state_shock = 10;
inline constexpr std::uint64_t outcome_shock = 11;
}  // namespace stream_id

struct Ar1Options {
  double ar_coeff = 0.8;
  double eps_sd = 0.5;   // N(0, 0.25)
  double x_sd = 1.0;
  bool zero_init = false;  // force U_{i,0} = 0 (tests)
};

/// AR(1)-with-covariate population, no carryover:
/// U_{i,t} = a*U_{i,t-1} + rho_x*X_{i,t} + eps_{i,t}; Y(0)=U, Y(1)=U+0.5.
/// U_{i,0} ~ N(0, stationary variance), frozen from the seed.
inline PopulationBundle make_ar1_no_carryover(int N, int T, double rho_x, std::uint64_t seed,
                                              const Ar1Options& opt = {}) {
  if (N < 2 || N % 2 != 0 || T < 1)
    throw std::invalid_argument("make_ar1_no_carryover: need even N >= 2, T >= 1");
  PopulationBundle b;
  auto& o = b.oracle;
  o.n_units = N;
  o.n_periods = T;
  o.order = CarryoverOrder::None;
  o.has_covariate = true;
  o.covariates = Matrix(N, T);
  o.y0 = Matrix(N, T);
  o.y1 = Matrix(N, T);
  double stat_var =
      (rho_x * rho_x * opt.x_sd * opt.x_sd + opt.eps_sd * opt.eps_sd) /
      (1.0 - opt.ar_coeff * opt.ar_coeff);
  for (int i = 0; i < N; ++i) {
    double u = opt.zero_init
                   ? 0.0
                   : std::sqrt(stat_var) * keyed_normal(seed, stream_id::ar_init, i, 0);
    for (int t = 1; t <= T; ++t) {
      double x = opt.x_sd * keyed_normal(seed, stream_id::covariate, i, t);
      double eps = opt.eps_sd * keyed_normal(seed, stream_id::ar_noise, i, t);
      u = opt.ar_coeff * u + rho_x * x + eps;
      o.covariates(i, t - 1) = x;
      o.y0(i, t - 1) = u;
      o.y1(i, t - 1) = u + 0.5;
    }
  }
  b.estimands.tau_t.assign(T, 0.5);
  b.estimands.tau_bar = 0.5;
  return b;
}

/// AR(1)-with-covariate population, first-order carryover:
/// U_{i,t} = 0.7*U_{i,t-1} + X_{i,t} + eps_{i,t};
/// Y(0,0)=U, Y(0,1)=U+1, Y(1,0)=U+0.5, Y(1,1)=U+3.5.
inline PopulationBundle make_ar1_first_order_carryover(int N, int T, std::uint64_t seed,
                                                       const Ar1Options& base = {.ar_coeff = 0.7}) {
  if (N < 4 || N % 4 != 0 || T < 2)
    throw std::invalid_argument("make_ar1_first_order_carryover: need N divisible by 4, T >= 2");
  PopulationBundle b;
  auto& o = b.oracle;
  o.n_units = N;
  o.n_periods = T;
  o.order = CarryoverOrder::FirstOrder;
  o.has_covariate = true;
  o.covariates = Matrix(N, T);
  for (int a = 0; a < 2; ++a)
    for (int c = 0; c < 2; ++c) o.yy[a][c] = Matrix(N, T);
  double stat_var = (base.x_sd * base.x_sd + base.eps_sd * base.eps_sd) /
                    (1.0 - base.ar_coeff * base.ar_coeff);
  for (int i = 0; i < N; ++i) {
    double u = base.zero_init
                   ? 0.0
                   : std::sqrt(stat_var) * keyed_normal(seed, stream_id::ar_init, i, 0);
    for (int t = 1; t <= T; ++t) {
      double x = base.x_sd * keyed_normal(seed, stream_id::covariate, i, t);
      double eps = base.eps_sd * keyed_normal(seed, stream_id::ar_noise, i, t);
      u = base.ar_coeff * u + x + eps;
      o.covariates(i, t - 1) = x;
      o.yy[0][0](i, t - 1) = u;
      o.yy[0][1](i, t - 1) = u + 1.0;
      o.yy[1][0](i, t - 1) = u + 0.5;
      o.yy[1][1](i, t - 1) = u + 3.5;
    }
  }
  b.estimands.tau_t.assign(T - 1, 3.5);
  b.estimands.tau_bar = 3.5;
  return b;
}

/// Heterogeneous first-order carryover: offsets 0, 2*B1, B2, 7*B3 with
/// B ~ Bernoulli(p) frozen per (i,t). p defaults to 0.5; p in {0,1} gives
/// the degenerate all-off / all-on variants.
inline PopulationBundle make_heterogeneous_carryover(int N, int T, std::uint64_t seed,
                                                     double bernoulli_p = 0.5,
                                                     const Ar1Options& base = {.ar_coeff = 0.7}) {
  if (N < 4 || N % 4 != 0 || T < 2)
    throw std::invalid_argument("make_heterogeneous_carryover: need N divisible by 4, T >= 2");
  PopulationBundle b;
  auto& o = b.oracle;
  o.n_units = N;
  o.n_periods = T;
  o.order = CarryoverOrder::FirstOrder;
  o.has_covariate = true;
  o.covariates = Matrix(N, T);
  for (int a = 0; a < 2; ++a)
    for (int c = 0; c < 2; ++c) o.yy[a][c] = Matrix(N, T);
  double stat_var = (base.x_sd * base.x_sd + base.eps_sd * base.eps_sd) /
                    (1.0 - base.ar_coeff * base.ar_coeff);
  for (int i = 0; i < N; ++i) {
    double u = base.zero_init
                   ? 0.0
                   : std::sqrt(stat_var) * keyed_normal(seed, stream_id::ar_init, i, 0);
    for (int t = 1; t <= T; ++t) {
      double x = base.x_sd * keyed_normal(seed, stream_id::covariate, i, t);
      double eps = base.eps_sd * keyed_normal(seed, stream_id::ar_noise, i, t);
      u = base.ar_coeff * u + x + eps;
      double b1 = keyed_bernoulli(seed, stream_id::bernoulli1, i, t, bernoulli_p) ? 1.0 : 0.0;
      double b2 = keyed_bernoulli(seed, stream_id::bernoulli2, i, t, bernoulli_p) ? 1.0 : 0.0;
      double b3 = keyed_bernoulli(seed, stream_id::bernoulli3, i, t, bernoulli_p) ? 1.0 : 0.0;
      o.covariates(i, t - 1) = x;
      o.yy[0][0](i, t - 1) = u;
      o.yy[0][1](i, t - 1) = u + 2.0 * b1;
      o.yy[1][0](i, t - 1) = u + b2;
      o.yy[1][1](i, t - 1) = u + 7.0 * b3;
    }
  }
  // tau_bar computed exactly from the realized frozen draws.
  b.estimands.tau_t.resize(T - 1);
  double total = 0.0;
  for (int t = 2; t <= T; ++t) {
    double s = 0.0;
    for (int i = 0; i < N; ++i) s += o.yy[1][1](i, t - 1) - o.yy[0][0](i, t - 1);
    b.estimands.tau_t[t - 2] = s / N;
    total += s / N;
  }
  b.estimands.tau_bar = total / (T - 1);
  return b;
}

struct FactorModelParams {
  int n_factors = 2;
  double ar2_coeff1 = 0.5;
  double ar2_coeff2 = 0.2;
  double innovation_sd = 0.1;
};

namespace detail {

// Base outcomes Y^base = L + e with L a rank-k product of frozen Gaussian
// factors and e an AR(2) residual path per unit.
inline void fill_factor_base(int N, int T, const FactorModelParams& p, std::uint64_t seed,
                             Matrix& base, Matrix& latent) {
  latent = Matrix(N, T);
  base = Matrix(N, T);
  int k = p.n_factors;
  Matrix u(N, k), v(T, k);
  for (int i = 0; i < N; ++i)
    for (int f = 0; f < k; ++f) u(i, f) = keyed_normal(seed, stream_id::factor_unit, i, f);
  for (int t = 0; t < T; ++t)
    for (int f = 0; f < k; ++f) v(t, f) = keyed_normal(seed, stream_id::factor_time, t, f);
  for (int i = 0; i < N; ++i) {
    double e1 = 0.0, e2 = 0.0;
    for (int t = 0; t < T; ++t) {
      double l = 0.0;
      for (int f = 0; f < k; ++f) l += u(i, f) * v(t, f);
      latent(i, t) = l;
      double e = p.ar2_coeff1 * e1 + p.ar2_coeff2 * e2 +
                 p.innovation_sd * keyed_normal(seed, stream_id::ar2_resid, i, t + 1);
      e2 = e1;
      e1 = e;
      base(i, t) = l + e;
    }
  }
}

}  // namespace detail

/// Synthetic rank-k factor-model population with AR(2) residuals.
/// carryover None:       Y(1) = base + tau              (tau_bar = tau)
/// carryover FirstOrder: Y(0,1) = base + tau, Y(1,1) = base + 2*tau
///                       (tau_bar = 2*tau)
inline PopulationBundle make_synthetic_factor_model(int N, int T, double tau,
                                                    CarryoverOrder carryover, std::uint64_t seed,
                                                    const FactorModelParams& p = {}) {
  if (N < 4 || T < 2)
    throw std::invalid_argument("make_synthetic_factor_model: need N >= 4, T >= 2");
  if (carryover == CarryoverOrder::FullPath)
    throw std::invalid_argument("make_synthetic_factor_model: carryover must be None or FirstOrder");
  PopulationBundle b;
  auto& o = b.oracle;
  o.n_units = N;
  o.n_periods = T;
  o.order = carryover;
  o.has_covariate = false;
  o.covariates = Matrix(N, T);
  Matrix base;
  detail::fill_factor_base(N, T, p, seed, base, b.latent);
  if (carryover == CarryoverOrder::None) {
    o.y0 = base;
    o.y1 = base;
    for (double& v : o.y1.data) v += tau;
    b.estimands.tau_t.assign(T, tau);
    b.estimands.tau_bar = tau;
  } else {
    o.yy[0][0] = base;
    o.yy[1][0] = base;
    o.yy[0][1] = base;
    for (double& v : o.yy[0][1].data) v += tau;
    o.yy[1][1] = base;
    for (double& v : o.yy[1][1].data) v += 2.0 * tau;
    b.estimands.tau_t.assign(T - 1, 2.0 * tau);
    b.estimands.tau_bar = 2.0 * tau;
  }
  return b;
}

/// Markov latent-state carryover on top of a factor-model base:
/// S_{i,1} = 0, S_{i,t} = rho*S_{i,t-1} + W_{i,t-1} + nu_{i,t};
/// Y = base + 0.5*tanh(S) + 0.5*W*tanh(S) + xi. Shocks ~ N(0, shock_sd^2),
/// frozen. The estimand is the all-ones vs all-zeros total effect.
inline PopulationBundle make_markov_latent_carryover(int N, int T, double rho, std::uint64_t seed,
                                                     const FactorModelParams& base_params = {},
                                                     double shock_sd = 0.4) {
  if (N < 4 || T < 2)
    throw std::invalid_argument("make_markov_latent_carryover: need N >= 4, T >= 2");
  if (!(std::fabs(rho) < 1.0))
    throw std::invalid_argument("make_markov_latent_carryover: need |rho| < 1");
  PopulationBundle b;
  auto& o = b.oracle;
  o.n_units = N;
  o.n_periods = T;
  o.order = CarryoverOrder::FullPath;
  o.has_covariate = false;
  o.covariates = Matrix(N, T);
  o.state_rho = rho;
  detail::fill_factor_base(N, T, base_params, seed, o.ybase, b.latent);
  o.state_shock = Matrix(N, T);
  o.outcome_shock = Matrix(N, T);
  for (int i = 0; i < N; ++i) {
    for (int t = 1; t <= T; ++t) {
      o.state_shock(i, t - 1) = shock_sd * keyed_normal(seed, stream_id::state_shock, i, t);
      o.outcome_shock(i, t - 1) = shock_sd * keyed_normal(seed, stream_id::outcome_shock, i, t);
    }
  }
  // Exact total effect from the two deterministic paths.
  std::vector<std::uint8_t> ones(T, 1), zeros(T, 0);
  b.estimands.tau_t.assign(T - 1, 0.0);
  double total = 0.0;
  for (int t = 2; t <= T; ++t) {
    double s = 0.0;
    for (int i = 0; i < N; ++i) {
      s += o.outcome(i, t, std::span(ones).subspan(0, t)) -
           o.outcome(i, t, std::span(zeros).subspan(0, t));
    }
    b.estimands.tau_t[t - 2] = s / N;
    total += s / N;
  }
  b.estimands.tau_bar = total / (T - 1);
  return b;
}

// ---- snapshot serialization -------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return nlohmann::json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != static_cast<std::size_t>(m.rows) * m.cols)
    throw std::invalid_argument("matrix snapshot: size mismatch");
  return m;
}

}  // namespace detail

inline nlohmann::json PotentialOutcomeOracle::snapshot() const {
  nlohmann::json j;
  j["schema"] = "switchlab.oracle.v1";
  j["n_units"] = n_units;
  j["n_periods"] = n_periods;
  j["carryover"] = to_string(order);
  j["has_covariate"] = has_covariate;
  j["covariates"] = detail::matrix_to_json(covariates);
  switch (order) {
    case CarryoverOrder::None:
      j["y0"] = detail::matrix_to_json(y0);
      j["y1"] = detail::matrix_to_json(y1);
      break;
    case CarryoverOrder::FirstOrder:
      j["y00"] = detail::matrix_to_json(yy[0][0]);
      j["y01"] = detail::matrix_to_json(yy[0][1]);
      j["y10"] = detail::matrix_to_json(yy[1][0]);
      j["y11"] = detail::matrix_to_json(yy[1][1]);
      break;
    case CarryoverOrder::FullPath:
      j["ybase"] = detail::matrix_to_json(ybase);
      j["state_shock"] = detail::matrix_to_json(state_shock);
      j["outcome_shock"] = detail::matrix_to_json(outcome_shock);
      j["state_rho"] = state_rho;
      break;
  }
  return j;
}

inline PotentialOutcomeOracle PotentialOutcomeOracle::from_snapshot(const nlohmann::json& j) {
  if (j.at("schema").get<std::string>() != "switchlab.oracle.v1")
    throw std::invalid_argument("oracle snapshot: unknown schema");
  PotentialOutcomeOracle o;
  o.n_units = j.at("n_units").get<int>();
  o.n_periods = j.at("n_periods").get<int>();
  std::string c = j.at("carryover").get<std::string>();
  o.has_covariate = j.at("has_covariate").get<bool>();
  o.covariates = detail::matrix_from_json(j.at("covariates"));
  if (c == "none") {
    o.order = CarryoverOrder::None;
    o.y0 = detail::matrix_from_json(j.at("y0"));
    o.y1 = detail::matrix_from_json(j.at("y1"));
  } else if (c == "first_order") {
    o.order = CarryoverOrder::FirstOrder;
    o.yy[0][0] = detail::matrix_from_json(j.at("y00"));
    o.yy[0][1] = detail::matrix_from_json(j.at("y01"));
    o.yy[1][0] = detail::matrix_from_json(j.at("y10"));
    o.yy[1][1] = detail::matrix_from_json(j.at("y11"));
  } else if (c == "full_path") {
    o.order = CarryoverOrder::FullPath;
    o.ybase = detail::matrix_from_json(j.at("ybase"));
    o.state_shock = detail::matrix_from_json(j.at("state_shock"));
    o.outcome_shock = detail::matrix_from_json(j.at("outcome_shock"));
    o.state_rho = j.at("state_rho").get<double>();
  } else {
    throw std::invalid_argument("oracle snapshot: unknown carryover tag");
  }
  return o;
}

}  // namespace switchlab

#endif  // SWITCHLAB_POPULATION_HPP
