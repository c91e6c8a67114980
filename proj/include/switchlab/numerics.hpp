#ifndef SWITCHLAB_NUMERICS_HPP
#define SWITCHLAB_NUMERICS_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

// Small dense-matrix statistics for low-dimensional balance metrics:
// chi-square distribution functions, scaled sample covariance and
// Mahalanobis imbalance distances. Everything here is dimension-generic
// but tuned for d up to ~10; all matrix work is dense and O(d^3).

namespace switchlab {

// Row-major dense matrix. Doubles only; no views, no striding.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

// Symmetric d x d matrix with full storage; symmetry is enforced on write
// through set().
struct SymmetricMatrix {
  int dim = 0;
  std::vector<double> data;

  SymmetricMatrix() = default;
  explicit SymmetricMatrix(int d)
      : dim(d), data(static_cast<std::size_t>(d) * d, 0.0) {
    if (d < 1) throw std::invalid_argument("SymmetricMatrix: dim must be >= 1");
  }

  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * dim + j]; }
  void set(int i, int j, double v) {
    data[static_cast<std::size_t>(i) * dim + j] = v;
    data[static_cast<std::size_t>(j) * dim + i] = v;
  }
};

namespace detail {

// Regularized lower incomplete gamma P(a, x) via series expansion for
// x < a + 1 and Lentz continued fraction for the complement otherwise.
inline double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

inline double gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_contfrac(a, x);
}

}  // namespace detail

/// P(chi^2_d <= x).
inline double chi2_cdf(double x, int d) {
  if (x < 0.0) throw std::domain_error("chi2_cdf: x must be >= 0");
  if (d < 1) throw std::domain_error("chi2_cdf: d must be >= 1");
  return detail::gamma_p(0.5 * d, 0.5 * x);
}

inline double chi2_pdf(double x, int d) {
  if (x <= 0.0) return 0.0;
  double a = 0.5 * d;
  return std::exp((a - 1.0) * std::log(x) - 0.5 * x - a * std::log(2.0) - std::lgamma(a));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
}

/// Inverse standard-normal CDF. Acklam's rational approximation refined by
/// one Halley step against erfc, good to ~1e-15.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must be in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    double q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement.
  double e = normal_cdf(x) - p;
  double u = e / normal_pdf(x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

/// Inverse chi-square CDF: chi2_cdf(result, d) == p to <= 1e-10.
inline double chi2_quantile(double p, int d) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("chi2_quantile: p must be in (0,1)");
  if (d < 1) throw std::domain_error("chi2_quantile: d must be >= 1");
  // Wilson-Hilferty starting point.
  double z = normal_quantile(p);
  double dd = static_cast<double>(d);
  double g = 2.0 / (9.0 * dd);
  double x = dd * std::pow(1.0 - g + z * std::sqrt(g), 3.0);
  if (!(x > 0.0)) x = 0.5 * dd * 1e-3;
  // Newton with bisection safeguard.
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 200; ++it) {
    double f = chi2_cdf(x, d) - p;
    if (f > 0.0) hi = x; else lo = x;
    double pdf = chi2_pdf(x, d);
    double step = (pdf > 0.0) ? f / pdf : 0.0;
    double xn = x - step;
    if (!(xn > lo && (hi == std::numeric_limits<double>::infinity() || xn < hi))) {
      xn = std::isfinite(hi) ? 0.5 * (lo + hi) : (lo > 0 ? 2.0 * lo : 1.0);
    }
    if (std::fabs(xn - x) < 1e-13 * (1.0 + x) && std::fabs(f) < 1e-12) {
      x = xn;
      break;
    }
    x = xn;
  }
  return x;
}

/// (4/N_g^2) * sum_i (H_i - Hbar)(H_i - Hbar)^T over the rows of H.
inline SymmetricMatrix scaled_covariance(const Matrix& H) {
  int n = H.rows;
  int d = H.cols;
  if (n < 2) throw std::invalid_argument("scaled_covariance: need at least 2 rows");
  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[j] += H(i, j);
  for (int j = 0; j < d; ++j) mean[j] /= n;
  SymmetricMatrix sigma(d);
  double scale = 4.0 / (static_cast<double>(n) * n);
  for (int j = 0; j < d; ++j) {
    for (int k = j; k < d; ++k) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += (H(i, j) - mean[j]) * (H(i, k) - mean[k]);
      sigma.set(j, k, scale * s);
    }
  }
  return sigma;
}

// Cyclic Jacobi eigendecomposition; adequate for the small d used here.
struct EigenDecomposition {
  std::vector<double> values;  // unsorted
  Matrix vectors;              // columns are eigenvectors
};

inline EigenDecomposition jacobi_eigen(const SymmetricMatrix& m) {
  int n = m.dim;
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = m(i, j);
  Matrix v(n, n);
  for (int i = 0; i < n; ++i) v(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::fabs(a(p, q)) < 1e-300) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  EigenDecomposition out;
  out.values.resize(n);
  for (int i = 0; i < n; ++i) out.values[i] = a(i, i);
  out.vectors = std::move(v);
  return out;
}

/// theta^T Sigma^{-1} theta. When Sigma is singular the pseudo-inverse on
/// the span of Sigma is used (eigenvalue cutoff 1e-10 * max eigenvalue);
/// a theta component off the span with norm > 1e-8 * ||theta|| yields +inf.
inline double mahalanobis(const std::vector<double>& theta, const SymmetricMatrix& sigma) {
  int d = sigma.dim;
  if (static_cast<int>(theta.size()) != d)
    throw std::invalid_argument("mahalanobis: dimension mismatch");
  double norm2 = 0.0;
  for (double v : theta) norm2 += v * v;
  if (norm2 == 0.0) return 0.0;

  EigenDecomposition eig = jacobi_eigen(sigma);
  double max_eig = 0.0;
  for (double v : eig.values) max_eig = std::max(max_eig, v);
  double cutoff = 1e-10 * max_eig;

  double dist = 0.0;
  double off_span2 = 0.0;
  for (int k = 0; k < d; ++k) {
    double c = 0.0;
    for (int i = 0; i < d; ++i) c += eig.vectors(i, k) * theta[i];
    if (eig.values[k] > cutoff) {
      dist += c * c / eig.values[k];
    } else {
      off_span2 += c * c;
    }
  }
  if (std::sqrt(off_span2) > 1e-8 * std::sqrt(norm2))
    return std::numeric_limits<double>::infinity();
  return dist;
}

}  // namespace switchlab

#endif  // SWITCHLAB_NUMERICS_HPP
