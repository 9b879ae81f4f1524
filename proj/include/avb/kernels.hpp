#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "avb/errors.hpp"
#include "avb/linalg.hpp"

namespace avb {

// Value of a bound with its components, all in nats.
//   value = -kl_term + lik_term - partition_term
struct BoundReport {
  double value = 0.0;
  double kl_term = 0.0;
  double lik_term = 0.0;
  double partition_term = 0.0;
};

// log(1 + e^x) without overflow or cancellation.
inline double log1pexp(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log σ(x) = -log(1 + e^{-x})
inline double log_sigmoid(double x) { return -log1pexp(-x); }

inline double softplus(double x) { return log1pexp(x); }

// Inverse of softplus for y > 0.
inline double softplus_inv(double y) {
  if (!(y > 0.0)) throw domain_error("softplus_inv: argument must be positive");
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

inline double logsumexp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

namespace detail {
inline void require_nonnegative(double v, const char* fn) {
  if (!(v >= 0.0)) throw domain_error(std::string(fn) + ": argument must be >= 0");
}
constexpr double kSeriesCutoff = 1e-4;
}  // namespace detail

// Jaakkola-Jordan curvature A(ζ) = -tanh(ζ/2) / (4ζ), in [-1/8, 0).
inline double jj_A(double zeta) {
  detail::require_nonnegative(zeta, "jj_A");
  if (zeta < detail::kSeriesCutoff) return -0.125 + zeta * zeta / 96.0;
  return -std::tanh(0.5 * zeta) / (4.0 * zeta);
}

// C(ζ) = ζ/2 - log(1 + e^ζ) + ζ tanh(ζ/2) / 4
inline double jj_C(double zeta) {
  detail::require_nonnegative(zeta, "jj_C");
  return 0.5 * zeta - log1pexp(zeta) + 0.25 * zeta * std::tanh(0.5 * zeta);
}

// Upper bound on E[log(1 + e^Z)], Z ~ N(m, v), tangent at ζ:
//   m/2 - A(ζ)(m² + v) - C(ζ)
// Tight when v = 0 and ζ = |m|.
inline double jj_quad_upper(double m, double v, double zeta) {
  detail::require_nonnegative(v, "jj_quad_upper");
  return 0.5 * m - jj_A(zeta) * (m * m + v) - jj_C(zeta);
}

// λ(ξ) = (σ(ξ) - 1/2) / (2ξ), in (0, 1/8].
inline double lambda_jj(double xi) {
  detail::require_nonnegative(xi, "lambda_jj");
  if (xi < detail::kSeriesCutoff) return 0.125 - xi * xi / 96.0;
  return std::tanh(0.5 * xi) / (4.0 * xi);
}

// One summand of the Bouchard bound on log(1 + e^{x - a}) at tangent ξ, with
// the extra variance v of x under q (v = 0 for a point logit).
inline double bouchard_term(double shifted, double v, double xi) {
  return 0.5 * (shifted - xi) + lambda_jj(xi) * (shifted * shifted + v - xi * xi) + log1pexp(xi);
}

// Upper bound on logsumexp(logits):
//   a + Σ_p [ (x_p - a - ξ_p)/2 + λ(ξ_p)((x_p - a)² - ξ_p²) + log(1 + e^{ξ_p}) ]
inline double bouchard_lse_upper(std::span<const double> logits, double a,
                                 std::span<const double> xi) {
  require_same_size(logits.size(), xi.size(), "bouchard_lse_upper");
  double s = a;
  for (std::size_t p = 0; p < logits.size(); ++p) {
    detail::require_nonnegative(xi[p], "bouchard_lse_upper");
    s += bouchard_term(logits[p] - a, 0.0, xi[p]);
  }
  return s;
}

// KL(N(μ_q, Σ_q) ‖ N(μ_p, Σ_p))
//   = ½[log|Σ_p| - log|Σ_q| + tr(Σ_p⁻¹Σ_q) + (μ_p-μ_q)ᵀΣ_p⁻¹(μ_p-μ_q) - D]
inline double gaussian_kl(std::span<const double> mu_q, const CovFactor& cov_q,
                          std::span<const double> mu_p, const CovFactor& cov_p) {
  const std::size_t d = mu_q.size();
  require_same_size(d, mu_p.size(), "gaussian_kl");
  require_same_size(d, cov_q.dim(), "gaussian_kl");
  require_same_size(d, cov_p.dim(), "gaussian_kl");

  // tr(Σ_p⁻¹Σ_q) = ‖L_p⁻¹ L_q‖_F²
  double trace_term = 0.0;
  const Matrix lq = cov_q.lower();
  Vector col(d);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < d; ++i) col[i] = lq(i, j);
    trace_term += squared_norm(cov_p.solve_lower(col));
  }
  Vector diff(d);
  for (std::size_t i = 0; i < d; ++i) diff[i] = mu_p[i] - mu_q[i];
  const double mahalanobis = squared_norm(cov_p.solve_lower(diff));

  const double kl = 0.5 * (cov_p.logdet() - cov_q.logdet() + trace_term + mahalanobis -
                           static_cast<double>(d));
  // Rounding can leave a -1e-16 residue for coincident arguments.
  return std::max(kl, 0.0);
}

}  // namespace avb
