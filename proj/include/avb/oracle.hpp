#pragma once

// Brute-force references used to check the bounds: Gauss-Hermite integrals of
// the exact models at low dimension, central finite differences and exhaustive
// subset averages. None of this code calls into the bound implementations.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "avb/errors.hpp"
#include "avb/kernels.hpp"
#include "avb/linalg.hpp"
#include "avb/logreg.hpp"
#include "avb/lvm.hpp"

namespace avb {

struct QuadratureSpec {
  std::size_t nodes = 61;  // per dimension
};

struct GaussHermiteRule {
  Vector nodes;    // for the standard normal weight
  Vector weights;  // sum to 1
};

// Gauss-Hermite rule for E[f(Z)], Z ~ N(0, 1). Roots of the orthonormal
// Hermite polynomials by Newton iteration from asymptotic starting guesses.
inline GaussHermiteRule gauss_hermite(std::size_t n) {
  if (n < 1 || n > 400) throw validation_error("gauss_hermite: node count must be in [1, 400]");
  constexpr double kPiQuarter = 0.7511255444649425;  // π^{-1/4}
  std::vector<double> x(n), w(n);
  const double dn = static_cast<double>(n);
  const std::size_t m = (n + 1) / 2;
  double z = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (i == 0)
      z = std::sqrt(2.0 * dn + 1.0) - 1.85575 * std::pow(2.0 * dn + 1.0, -0.16667);
    else if (i == 1)
      z -= 1.14 * std::pow(dn, 0.426) / z;
    else if (i == 2)
      z = 1.86 * z - 0.86 * x[0];
    else if (i == 3)
      z = 1.91 * z - 0.91 * x[1];
    else
      z = 2.0 * z - x[i - 2];
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = kPiQuarter, p2 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        const double dj = static_cast<double>(j);
        p1 = z * std::sqrt(2.0 / (dj + 1.0)) * p2 - std::sqrt(dj / (dj + 1.0)) * p3;
      }
      pp = std::sqrt(2.0 * dn) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = 2.0 / (pp * pp);
    w[n - 1 - i] = w[i];
  }
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
  for (std::size_t i = 0; i < n; ++i) {
    rule.nodes[i] = std::numbers::sqrt2 * x[n - 1 - i];
    rule.weights[i] = w[n - 1 - i] * inv_sqrt_pi;
  }
  return rule;
}

// E[log σ(s Z)], Z ~ N(m, v), by Gauss-Hermite.
inline double expected_log_sigmoid(double m, double v, double sign, const GaussHermiteRule& rule) {
  const double sd = std::sqrt(v);
  double s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i)
    s += rule.weights[i] * -log1pexp(-sign * (m + sd * rule.nodes[i]));
  return s;
}

// E_q[log p(y | X, β)] - KL(q ‖ prior), each record integrated over its
// one-dimensional activation.
inline double quadrature_exact_elbo(const LogRegDataset& data, const LogRegPrior& prior,
                                    const GaussianVariational& q, std::size_t nodes = 96) {
  const auto rule = gauss_hermite(nodes);
  double lik = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto x = data.X.row(n);
    lik += expected_log_sigmoid(dot(x, q.mu), q.cov.quad_form(x), data.y[n] == 1 ? 1.0 : -1.0, rule);
  }
  return lik - gaussian_kl(q.mu, q.cov, prior.mean(), prior.cov());
}

namespace detail {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline double logreg_loglik(const LogRegDataset& data, std::span<const double> beta) {
  double s = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const double z = dot(data.X.row(n), beta);
    s += -log1pexp(data.y[n] == 1 ? -z : z);
  }
  return s;
}

inline double log_normal_density(std::span<const double> x, std::span<const double> mean,
                                 const CovFactor& cov) {
  Vector diff(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x[i] - mean[i];
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + cov.logdet() +
                 squared_norm(cov.solve_lower(diff)));
}

// Mode and negative inverse Hessian of the log posterior, by damped Newton.
inline std::pair<Vector, CovFactor> logreg_laplace(const LogRegDataset& data,
                                                   const LogRegPrior& prior) {
  const std::size_t d = prior.dim();
  const Matrix& prec = prior.precision();
  auto objective = [&](const Vector& b) {
    return logreg_loglik(data, b) + log_normal_density(b, prior.mean(), prior.cov());
  };
  Vector beta = prior.mean();
  double f = objective(beta);
  Matrix neg_hess(d, d);
  for (int iter = 0; iter < 200; ++iter) {
    Vector grad(d, 0.0);
    neg_hess = prec;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) grad[i] -= prec(i, j) * (beta[j] - prior.mean()[j]);
    for (std::size_t n = 0; n < data.size(); ++n) {
      const auto x = data.X.row(n);
      const double p = sigmoid(dot(x, beta));
      const double r = static_cast<double>(data.y[n]) - p;
      const double w = p * (1.0 - p);
      for (std::size_t i = 0; i < d; ++i) {
        grad[i] += r * x[i];
        for (std::size_t j = 0; j < d; ++j) neg_hess(i, j) += w * x[i] * x[j];
      }
    }
    const Vector step = cholesky(neg_hess).solve(grad);
    double t = 1.0;
    Vector trial(d);
    double ft = f;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < d; ++i) trial[i] = beta[i] + t * step[i];
      ft = objective(trial);
      if (ft >= f) break;
      t *= 0.5;
    }
    if (!(ft >= f)) break;
    const double change = std::sqrt(squared_norm(step)) * t;
    beta = trial;
    f = ft;
    if (change < 1e-13) break;
  }
  // Curvature at the final point.
  neg_hess = prec;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto x = data.X.row(n);
    const double p = sigmoid(dot(x, beta));
    const double w = p * (1.0 - p);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) neg_hess(i, j) += w * x[i] * x[j];
  }
  return {beta, cholesky(cholesky(neg_hess).inverse())};
}

// Visits every node of a d-dimensional tensor-product rule: fn(z, weight).
template <typename Fn>
void for_each_tensor_node(std::size_t d, const GaussHermiteRule& rule, Fn&& fn) {
  const std::size_t n = rule.nodes.size();
  std::vector<std::size_t> idx(d, 0);
  Vector z(d);
  while (true) {
    double w = 1.0;
    for (std::size_t k = 0; k < d; ++k) {
      z[k] = rule.nodes[idx[k]];
      w *= rule.weights[idx[k]];
    }
    fn(static_cast<const Vector&>(z), w);
    std::size_t k = 0;
    while (k < d && ++idx[k] == n) idx[k++] = 0;
    if (k == d) break;
  }
}

// Log importance integrand and posterior draws on the Laplace-centered grid.
struct LogRegGrid {
  std::vector<Vector> betas;
  Vector log_terms;  // log(weight * integrand)
};

inline LogRegGrid logreg_grid(const LogRegDataset& data, const LogRegPrior& prior,
                              const QuadratureSpec& spec) {
  const std::size_t d = prior.dim();
  if (d > 3) throw validation_error("quadrature: dimension " + std::to_string(d) +
                                    " unsupported (D <= 3)");
  if (data.size() > 0) require_same_size(data.dim(), d, "quadrature");
  const auto [mode, laplace] = logreg_laplace(data, prior);
  const auto rule = gauss_hermite(spec.nodes);
  LogRegGrid grid;
  for_each_tensor_node(d, rule, [&](const Vector& z, double w) {
    Vector beta = laplace.mul_lower(z);
    for (std::size_t i = 0; i < d; ++i) beta[i] += mode[i];
    const double log_q = -0.5 * (static_cast<double>(d) * kLog2Pi + laplace.logdet() + squared_norm(z));
    grid.log_terms.push_back(std::log(w) + logreg_loglik(data, beta) +
                             log_normal_density(beta, prior.mean(), prior.cov()) - log_q);
    grid.betas.push_back(std::move(beta));
  });
  return grid;
}

}  // namespace detail

// log ∫ p(y | X, β) N(β; μ_β, Σ_β) dβ by tensor-product Gauss-Hermite on a
// grid centered at the posterior mode and scaled by the Laplace covariance.
// With no data the grid is the prior itself and the integrand is constant.
inline double quadrature_log_marginal(const LogRegDataset& data, const LogRegPrior& prior,
                                      const QuadratureSpec& spec = {}) {
  const auto grid = detail::logreg_grid(data, prior, spec);
  return logsumexp(grid.log_terms);
}

struct PosteriorMoments {
  Vector mean;
  Matrix cov;
};

inline PosteriorMoments quadrature_posterior_moments(const LogRegDataset& data,
                                                     const LogRegPrior& prior,
                                                     const QuadratureSpec& spec = {}) {
  const auto grid = detail::logreg_grid(data, prior, spec);
  const std::size_t d = prior.dim();
  const double lz = logsumexp(grid.log_terms);
  PosteriorMoments m{Vector(d, 0.0), Matrix(d, d)};
  Vector w(grid.log_terms.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(grid.log_terms[i] - lz);
    for (std::size_t k = 0; k < d; ++k) m.mean[k] += w[i] * grid.betas[i][k];
  }
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        m.cov(a, b) += w[i] * (grid.betas[i][a] - m.mean[a]) * (grid.betas[i][b] - m.mean[b]);
  return m;
}

// log ∫ Π_t softmax(Ψ ω + ρ)_{v_t} N(ω; 0, 1) dω for a scalar latent (K = 1).
// The log integrand is concave in ω; the grid is centered at its maximum.
inline double quadrature_lvm_loglik(std::span<const std::size_t> session, const LvmParams& params,
                                    const QuadratureSpec& spec = {}) {
  if (params.K != 1) throw validation_error("quadrature_lvm_loglik: only K = 1 is supported");
  if (session.empty()) throw validation_error("quadrature_lvm_loglik: empty session");
  for (std::size_t v : session)
    if (v >= params.P) throw validation_error("quadrature_lvm_loglik: item id outside catalog");
  const std::size_t p = params.P;
  const double t = static_cast<double>(session.size());
  double pos_slope = 0.0, pos_const = 0.0;
  for (std::size_t v : session) {
    pos_slope += params.psi(v, 0);
    pos_const += params.rho[v];
  }
  Vector logits(p);
  auto log_joint = [&](double w) {
    for (std::size_t i = 0; i < p; ++i) logits[i] = params.psi(i, 0) * w + params.rho[i];
    return pos_slope * w + pos_const - t * logsumexp(logits) - 0.5 * w * w -
           0.5 * detail::kLog2Pi;
  };
  // Newton on the concave log joint.
  double w = 0.0;
  double curvature = 1.0;
  for (int it = 0; it < 200; ++it) {
    for (std::size_t i = 0; i < p; ++i) logits[i] = params.psi(i, 0) * w + params.rho[i];
    const double lse = logsumexp(logits);
    double mean = 0.0, second = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      const double pi = std::exp(logits[i] - lse);
      mean += pi * params.psi(i, 0);
      second += pi * params.psi(i, 0) * params.psi(i, 0);
    }
    const double g = pos_slope - t * mean - w;
    curvature = t * (second - mean * mean) + 1.0;
    const double step = g / curvature;
    w += step;
    if (std::abs(step) < 1e-14) break;
  }
  const double sd = 1.0 / std::sqrt(curvature);
  const auto rule = gauss_hermite(spec.nodes);
  Vector terms(rule.nodes.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double z = rule.nodes[i];
    const double omega = w + sd * z;
    const double log_q = -0.5 * (detail::kLog2Pi + z * z) - std::log(sd);
    terms[i] = std::log(rule.weights[i]) + log_joint(omega) - log_q;
  }
  return logsumexp(terms);
}

// Central differences (f(θ + h e_i) - f(θ - h e_i)) / 2h.
template <typename F>
Vector finite_diff_grad(F&& f, std::span<const double> theta, double step = 1e-5) {
  Vector x(theta.begin(), theta.end());
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(std::span<const double>(x));
    x[i] = orig - step;
    const double down = f(std::span<const double>(x));
    x[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

inline double binomial_coefficient(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i)
    c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return c;
}

// Exact mean of estimator(subset) over all S-subsets of [0, P), each subset
// passed in ascending order.
template <typename Estimator>
double enumerate_subset_expectation(Estimator&& estimator, std::size_t p, std::size_t s) {
  if (s < 1 || s > p) throw validation_error("enumerate_subset_expectation: need 1 <= S <= P");
  const double count = binomial_coefficient(p, s);
  if (count > 1e5)
    throw validation_error("enumerate_subset_expectation: C(" + std::to_string(p) + ", " +
                           std::to_string(s) + ") exceeds 1e5 subsets");
  std::vector<std::size_t> idx(s);
  for (std::size_t i = 0; i < s; ++i) idx[i] = i;
  double total = 0.0;
  while (true) {
    total += estimator(std::span<const std::size_t>(idx));
    std::size_t i = s;
    while (i > 0 && idx[i - 1] == p - s + (i - 1)) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < s; ++j) idx[j] = idx[j - 1] + 1;
  }
  return total / count;
}

// Maximizer of a unimodal function on [lo, hi].
template <typename F>
double golden_section_maximize(F&& f, double lo, double hi, double tol = 1e-10) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol * std::max(1.0, std::abs(a) + std::abs(b))) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace avb
