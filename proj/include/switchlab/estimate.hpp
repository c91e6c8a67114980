#ifndef SWITCHLAB_ESTIMATE_HPP
#define SWITCHLAB_ESTIMATE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "switchlab/design.hpp"
#include "switchlab/numerics.hpp"

// Point estimators for the SATE in both carryover regimes, the
// rerandomization variance approximation, and the prediction-based
// conservative block variance estimator with Wald intervals.

namespace switchlab {

enum class Regime { NoCarryover, FirstOrder };

struct PeriodEstimates {
  Regime regime = Regime::NoCarryover;
  std::vector<double> tau_t;  // length T (no-carryover) or T-1 (t = 2..T)
  double tau_hat = 0.0;       // mean of tau_t

  nlohmann::json to_json() const {
    return {{"regime", regime == Regime::NoCarryover ? "no_carryover" : "first_order"},
            {"tau_t", tau_t},
            {"tau_hat", tau_hat}};
  }
};

/// Treated mean minus control mean at one period; requires exactly N/2
/// treated.
inline double diff_in_means_period(std::span<const double> y, std::span<const std::uint8_t> w) {
  int n = static_cast<int>(y.size());
  int treated = 0;
  for (auto v : w) treated += v;
  if (2 * treated != n)
    throw std::invalid_argument("diff_in_means_period: column must have N/2 treated units");
  double s1 = 0.0, s0 = 0.0;
  for (int i = 0; i < n; ++i) (w[i] ? s1 : s0) += y[i];
  return 2.0 * (s1 - s0) / n;
}

/// No-carryover SATE: average of per-period difference-in-means contrasts.
inline PeriodEstimates sate_no_carryover(const ExperimentTrajectory& tr) {
  PeriodEstimates est;
  est.regime = Regime::NoCarryover;
  int n = tr.n_units, T = tr.n_periods;
  std::vector<double> y(n);
  std::vector<std::uint8_t> w(n);
  for (int t = 1; t <= T; ++t) {
    for (int i = 0; i < n; ++i) {
      y[i] = tr.y(i, t);
      w[i] = tr.w(i, t);
    }
    est.tau_t.push_back(diff_in_means_period(y, w));
  }
  double s = 0.0;
  for (double v : est.tau_t) s += v;
  est.tau_hat = s / T;
  return est;
}

struct CarryoverEstimatorOptions {
  // Default uses the fixed 4/N scaling (stay groups of size N/4 under the
  // blocked design). The ratio variant divides by realized stay-group
  // sizes; empty-stay-group periods are then skipped.
  bool ratio_by_realized_sizes = false;
};

/// First-order-carryover SATE: difference in means between the (1,1) and
/// (0,0) stay groups at each t >= 2, averaged.
inline PeriodEstimates sate_carryover(const ExperimentTrajectory& tr,
                                      const CarryoverEstimatorOptions& opt = {}) {
  int n = tr.n_units, T = tr.n_periods;
  if (T < 2) throw std::invalid_argument("sate_carryover: need T >= 2");
  PeriodEstimates est;
  est.regime = Regime::FirstOrder;
  int used = 0;
  double total = 0.0;
  for (int t = 2; t <= T; ++t) {
    double s11 = 0.0, s00 = 0.0;
    int n11 = 0, n00 = 0;
    for (int i = 0; i < n; ++i) {
      bool prev = tr.w(i, t - 1), cur = tr.w(i, t);
      if (prev && cur) {
        s11 += tr.y(i, t);
        ++n11;
      } else if (!prev && !cur) {
        s00 += tr.y(i, t);
        ++n00;
      }
    }
    double tau;
    if (opt.ratio_by_realized_sizes) {
      if (n11 == 0 || n00 == 0) {
        est.tau_t.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;  // degenerate period skipped
      }
      tau = s11 / n11 - s00 / n00;
    } else {
      tau = (4.0 / n) * (s11 - s00);
    }
    est.tau_t.push_back(tau);
    total += tau;
    ++used;
  }
  if (used == 0) throw std::runtime_error("sate_carryover: all periods degenerate");
  est.tau_hat = total / used;
  return est;
}

/// v_{d,c} = P(chi^2_{d+2} <= c) / P(chi^2_d <= c).
inline double variance_reduction_factor(int d, double c) {
  if (d < 1) throw std::domain_error("variance_reduction_factor: d >= 1");
  if (!(c > 0.0)) throw std::domain_error("variance_reduction_factor: c > 0");
  if (!std::isfinite(c)) return 1.0;
  return chi2_cdf(c, d + 2) / chi2_cdf(c, d);
}

/// Plug-in period-t conditional variance approximation under
/// rerandomization: (V_tt / N) * {1 - (1 - v_{d,c}) * R_t^2}, with sample
/// analogues from the two observed arms and the conservative substitution
/// S^2_{tau_t} -> S^2_{tau_t | H}.
inline double conditional_variance_approx(const Matrix& H, std::span<const double> y,
                                          std::span<const std::uint8_t> w, double c) {
  int n = H.rows, d = H.cols;
  if (static_cast<int>(y.size()) != n || static_cast<int>(w.size()) != n)
    throw std::invalid_argument("conditional_variance_approx: size mismatch");
  int n1 = 0;
  for (auto v : w) n1 += v;
  int n0 = n - n1;
  if (n1 < 2 || n0 < 2)
    throw std::invalid_argument("conditional_variance_approx: both arms need >= 2 units");

  // Arm means and variances.
  double m1 = 0.0, m0 = 0.0;
  for (int i = 0; i < n; ++i) (w[i] ? m1 : m0) += y[i];
  m1 /= n1;
  m0 /= n0;
  double s1 = 0.0, s0 = 0.0;
  for (int i = 0; i < n; ++i) {
    double dev = y[i] - (w[i] ? m1 : m0);
    (w[i] ? s1 : s0) += dev * dev;
  }
  s1 /= (n1 - 1);
  s0 /= (n0 - 1);

  if (d == 0) return (2.0 * s1 + 2.0 * s0) / n;

  // H mean over all units; covariances of Y with H within each arm.
  std::vector<double> hbar(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) hbar[j] += H(i, j);
  for (double& v : hbar) v /= n;

  std::vector<double> cov1(d, 0.0), cov0(d, 0.0);
  for (int i = 0; i < n; ++i) {
    double dev = y[i] - (w[i] ? m1 : m0);
    for (int j = 0; j < d; ++j)
      (w[i] ? cov1[j] : cov0[j]) += dev * (H(i, j) - hbar[j]);
  }
  for (int j = 0; j < d; ++j) {
    cov1[j] /= (n1 - 1);
    cov0[j] /= (n0 - 1);
  }

  // Finite-population covariance of H over all N units.
  SymmetricMatrix sh(d);
  for (int j = 0; j < d; ++j) {
    for (int k = j; k < d; ++k) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += (H(i, j) - hbar[j]) * (H(i, k) - hbar[k]);
      sh.set(j, k, s / (n - 1));
    }
  }

  // Quadratic forms cov^T (S_H^2)^+ cov via the eigen pseudo-inverse.
  EigenDecomposition eig = jacobi_eigen(sh);
  double max_eig = 0.0;
  for (double v : eig.values) max_eig = std::max(max_eig, v);
  double cutoff = 1e-10 * max_eig;
  auto proj_var = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double q = 0.0;
    for (int k = 0; k < d; ++k) {
      if (eig.values[k] <= cutoff) continue;
      double ca = 0.0, cb = 0.0;
      for (int i = 0; i < d; ++i) {
        ca += eig.vectors(i, k) * a[i];
        cb += eig.vectors(i, k) * b[i];
      }
      q += ca * cb / eig.values[k];
    }
    return q;
  };
  double proj1 = proj_var(cov1, cov1);
  double proj0 = proj_var(cov0, cov0);
  std::vector<double> covt(d);
  for (int j = 0; j < d; ++j) covt[j] = cov1[j] - cov0[j];
  double projt = proj_var(covt, covt);

  double vtt = 2.0 * s1 + 2.0 * s0 - projt;  // conservative substitution
  if (vtt <= 0.0) return 0.0;
  double r2 = (2.0 * proj1 + 2.0 * proj0 - projt) / vtt;
  r2 = std::clamp(r2, 0.0, 1.0);
  double v = variance_reduction_factor(d, c);
  return (vtt / n) * (1.0 - (1.0 - v) * r2);
}

enum class BlockPredictor { ScaledAverage, WeightedRecency };

struct VarianceReport {
  double v2 = 0.0;                    // sum of squared block residuals
  double variance_of_tau_hat = 0.0;   // v2 / (T-1)^2 or / T^2
  std::vector<int> block_starts;      // t_j, 1-based
  int block_size = 0;
  std::string predictor;
  double point_estimate = 0.0;
  double ci_level = 0.95;
  double ci_lo = 0.0, ci_hi = 0.0;

  nlohmann::json to_json() const {
    return {{"v2", v2},
            {"variance", variance_of_tau_hat},
            {"block_starts", block_starts},
            {"block_size", block_size},
            {"predictor", predictor},
            {"point_estimate", point_estimate},
            {"ci_level", ci_level},
            {"ci_lo", ci_lo},
            {"ci_hi", ci_hi}};
  }
};

/// Prediction-based conservative block variance estimator with Wald CI.
/// Blocks start at t_j = (j-1)*b_T + 1 over t = 1..T; the first estimate
/// of each block is dropped from the block sum. The predictor M_j scales
/// the running sum of past estimates by (t_{j+1}-t_j-1)/(t_j-1); the first
/// block uses M_1 = 0 (no past information, residual is the raw sum).
inline VarianceReport block_conservative_variance(const PeriodEstimates& est, int block_size,
                                                  BlockPredictor predictor = BlockPredictor::ScaledAverage,
                                                  double ci_level = 0.95) {
  bool carry = est.regime == Regime::FirstOrder;
  int T = static_cast<int>(est.tau_t.size()) + (carry ? 1 : 0);
  if (block_size < 2) throw std::invalid_argument("block_conservative_variance: b_T >= 2");
  if (T < block_size) throw std::invalid_argument("block_conservative_variance: T >= b_T");

  // tau(t), 1-based; absent at t=1 in the carryover regime.
  auto tau_at = [&](int t) -> double {
    if (carry) {
      if (t < 2) return std::numeric_limits<double>::quiet_NaN();
      return est.tau_t[t - 2];
    }
    return est.tau_t[t - 1];
  };
  auto exists = [&](int t) { return !carry || t >= 2; };

  int J = (T + block_size - 1) / block_size;
  VarianceReport rep;
  rep.block_size = block_size;
  rep.predictor = predictor == BlockPredictor::ScaledAverage ? "scaled_average" : "weighted_recency";
  rep.ci_level = ci_level;
  rep.point_estimate = est.tau_hat;

  double v2 = 0.0;
  for (int j = 1; j <= J; ++j) {
    int tj = (j - 1) * block_size + 1;
    int tnext = (j == J) ? T + 1 : j * block_size + 1;
    rep.block_starts.push_back(tj);

    double block_sum = 0.0;
    for (int t = tj + 1; t <= tnext - 1; ++t)
      if (exists(t)) block_sum += tau_at(t);

    double mj = 0.0;
    if (j > 1) {
      double scale = static_cast<double>(tnext - tj - 1) / static_cast<double>(tj - 1);
      if (predictor == BlockPredictor::ScaledAverage) {
        double past = 0.0;
        for (int t = 1; t <= tj - 1; ++t)
          if (exists(t)) past += tau_at(t);
        mj = scale * past;
      } else {
        // Recency weighting: geometric down-weighting of older estimates,
        // normalized so a flat series is predicted exactly.
        const double lambda = 0.8;
        double wsum = 0.0, vsum = 0.0, wgt = 1.0;
        for (int t = tj - 1; t >= 1; --t) {
          if (exists(t)) {
            vsum += wgt * tau_at(t);
            wsum += wgt;
          }
          wgt *= lambda;
        }
        mj = (wsum > 0.0) ? (tnext - tj - 1) * (vsum / wsum) : 0.0;
      }
    }
    double resid = block_sum - mj;
    v2 += resid * resid;
  }
  rep.v2 = v2;
  double denom = carry ? static_cast<double>(T - 1) : static_cast<double>(T);
  rep.variance_of_tau_hat = v2 / (denom * denom);
  double z = normal_quantile(0.5 + 0.5 * ci_level);
  double hw = z * std::sqrt(v2) / denom;
  rep.ci_lo = est.tau_hat - hw;
  rep.ci_hi = est.tau_hat + hw;
  return rep;
}

}  // namespace switchlab

#endif  // SWITCHLAB_ESTIMATE_HPP
