#pragma once

// Bayesian logistic regression under the Jaakkola-Jordan bound.
//
// For a record (x, y) with activation m = xᵀμ_q and variance v = xᵀΣ_q x the
// bound contributes
//
//   y m + A(ζ)(m² + v) - m/2 + C(ζ),      ζ = sqrt(v + m²),
//
// and the global term is -KL(q ‖ prior). ζ is always recomputed in closed
// form, so the bound is a deterministic function of q alone. Because that ζ
// maximizes the record term, gradients hold ζ fixed (envelope theorem).

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "avb/errors.hpp"
#include "avb/kernels.hpp"
#include "avb/linalg.hpp"
#include "avb/optim.hpp"
#include "avb/parallel.hpp"
#include "avb/rng.hpp"

namespace avb {

struct LogRegDataset {
  Matrix X;            // N x D
  std::vector<int> y;  // 0/1

  std::size_t size() const { return X.rows(); }
  std::size_t dim() const { return X.cols(); }

  void validate() const {
    require_same_size(X.rows(), y.size(), "LogRegDataset");
    for (std::size_t n = 0; n < y.size(); ++n)
      if (y[n] != 0 && y[n] != 1)
        throw validation_error("LogRegDataset: label at record " + std::to_string(n) +
                               " is not 0/1");
  }
};

class LogRegPrior {
 public:
  LogRegPrior(Vector mean, CovFactor cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    require_same_size(mean_.size(), cov_.dim(), "LogRegPrior");
    precision_ = cov_.inverse();
  }

  static LogRegPrior standard(std::size_t d) { return {Vector(d, 0.0), CovFactor::identity(d)}; }

  const Vector& mean() const { return mean_; }
  const CovFactor& cov() const { return cov_; }
  const Matrix& precision() const { return precision_; }
  std::size_t dim() const { return mean_.size(); }

 private:
  Vector mean_;
  CovFactor cov_;
  Matrix precision_;
};

// q(β) = N(μ_q, L Lᵀ). The free (unconstrained) parameterization is
// [μ_q, lower triangle of L row by row] with each diagonal entry stored as
// softplus⁻¹(L_ii).
struct GaussianVariational {
  Vector mu;
  CovFactor cov;

  std::size_t dim() const { return mu.size(); }

  static std::size_t free_size(std::size_t d) { return d + d * (d + 1) / 2; }

  static GaussianVariational from_prior(const LogRegPrior& prior) {
    return {prior.mean(), CovFactor::from_cholesky(prior.cov().lower())};
  }

  static GaussianVariational from_free(std::span<const double> theta, std::size_t d) {
    require_same_size(theta.size(), free_size(d), "GaussianVariational::from_free");
    Vector mu(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(d));
    Matrix l(d, d);
    std::size_t k = d;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j, ++k) l(i, j) = (i == j) ? softplus(theta[k]) : theta[k];
    return {std::move(mu), CovFactor::from_cholesky(std::move(l))};
  }

  Vector to_free() const {
    const std::size_t d = dim();
    const Matrix l = cov.lower();
    Vector theta(free_size(d));
    std::copy(mu.begin(), mu.end(), theta.begin());
    std::size_t k = d;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j, ++k) theta[k] = (i == j) ? softplus_inv(l(i, j)) : l(i, j);
    return theta;
  }
};

// ζ = sqrt(xᵀΣ_q x + (xᵀμ_q)²)
inline double zeta_closed_form(std::span<const double> x, const GaussianVariational& q) {
  const double m = dot(x, q.mu);
  return std::sqrt(q.cov.quad_form(x) + m * m);
}

// Record contribution y m - jj_quad_upper(m, v, ζ) at an arbitrary ζ.
inline double jj_record_term_at(std::span<const double> x, int y, const GaussianVariational& q,
                                double zeta) {
  const double m = dot(x, q.mu);
  const double v = q.cov.quad_form(x);
  return static_cast<double>(y) * m - jj_quad_upper(m, v, zeta);
}

inline double jj_record_term(std::span<const double> x, int y, const GaussianVariational& q) {
  const double m = dot(x, q.mu);
  const double v = q.cov.quad_form(x);
  return static_cast<double>(y) * m - jj_quad_upper(m, v, std::sqrt(v + m * m));
}

namespace detail {
inline void check_logreg_shapes(const LogRegDataset& data, const LogRegPrior& prior,
                                const GaussianVariational& q) {
  require_same_size(data.X.rows(), data.y.size(), "elbo_jj: X rows vs labels");
  if (data.size() > 0) require_same_size(data.dim(), q.dim(), "elbo_jj: data vs posterior");
  require_same_size(prior.dim(), q.dim(), "elbo_jj: prior vs posterior");
}

inline std::size_t records_per_thread(std::size_t d) {
  return std::max<std::size_t>(16, 200000 / std::max<std::size_t>(1, d * d));
}
}  // namespace detail

// -KL(q ‖ prior) + Σ_n record term.
inline BoundReport elbo_jj(const LogRegDataset& data, const LogRegPrior& prior,
                           const GaussianVariational& q) {
  detail::check_logreg_shapes(data, prior, q);
  BoundReport r;
  r.kl_term = gaussian_kl(q.mu, q.cov, prior.mean(), prior.cov());
  r.lik_term = ordered_parallel_sum(
      data.size(), [&](std::size_t n) { return jj_record_term(data.X.row(n), data.y[n], q); },
      detail::records_per_thread(q.dim()));
  r.value = r.lik_term - r.kl_term;
  return r;
}

// Unbiased minibatch estimate of elbo_jj:
//   -KL + (N/|B|) Σ_{n∈B} record term
inline double elbo_jj_minibatch(std::span<const std::size_t> batch, const LogRegDataset& data,
                                const LogRegPrior& prior, const GaussianVariational& q) {
  if (batch.empty()) throw validation_error("elbo_jj_minibatch: empty batch");
  detail::check_logreg_shapes(data, prior, q);
  double lik = 0.0;
  for (std::size_t n : batch) {
    if (n >= data.size())
      throw validation_error("elbo_jj_minibatch: record index " + std::to_string(n) +
                             " out of range");
    lik += jj_record_term(data.X.row(n), data.y[n], q);
  }
  const double scale = static_cast<double>(data.size()) / static_cast<double>(batch.size());
  return scale * lik - gaussian_kl(q.mu, q.cov, prior.mean(), prior.cov());
}

namespace detail {

// Gradient of -KL(q ‖ prior) with respect to (μ, L) packed like the free
// parameterization, but still in the constrained L coordinates.
inline Vector neg_kl_grad_constrained(const LogRegPrior& prior, const GaussianVariational& q) {
  const std::size_t d = q.dim();
  const Matrix& prec = prior.precision();
  const Matrix l = q.cov.lower();
  Vector g(GaussianVariational::free_size(d), 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += prec(i, j) * (q.mu[j] - prior.mean()[j]);
    g[i] = -s;
  }
  std::size_t k = d;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j, ++k) {
      double pl = 0.0;  // (Σ_p⁻¹ L)_ij
      for (std::size_t r = j; r < d; ++r) pl += prec(i, r) * l(r, j);
      g[k] = -pl + (i == j ? 1.0 / l(i, i) : 0.0);
    }
  return g;
}

// Adds scale * d(record term)/d(μ, L) with ζ held at its closed-form value.
inline void add_record_grad(std::span<const double> x, int y, const GaussianVariational& q,
                            double scale, Vector& g) {
  const std::size_t d = q.dim();
  const double m = dot(x, q.mu);
  const Vector w = q.cov.mul_lower_transpose(x);
  const double v = squared_norm(w);
  const double a = jj_A(std::sqrt(v + m * m));
  const double gm = scale * (static_cast<double>(y) - 0.5 + 2.0 * a * m);
  for (std::size_t i = 0; i < d; ++i) g[i] += gm * x[i];
  const double gl = scale * 2.0 * a;
  std::size_t k = d;
  for (std::size_t i = 0; i < d; ++i) {
    const double xi = gl * x[i];
    for (std::size_t j = 0; j <= i; ++j, ++k) g[k] += xi * w[j];
  }
}

// Chain rule from L_ii to the softplus-parameterized diagonal.
inline void apply_diag_chain(std::span<const double> theta, std::size_t d, Vector& g) {
  std::size_t k = d;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j, ++k)
      if (i == j) g[k] *= sigmoid(theta[k]);
}

}  // namespace detail

// Gradient of the minibatch estimate with respect to the free parameters.
inline Vector grad_elbo_jj_minibatch(std::span<const std::size_t> batch, const LogRegDataset& data,
                                     const LogRegPrior& prior, std::span<const double> theta) {
  const std::size_t d = prior.dim();
  const GaussianVariational q = GaussianVariational::from_free(theta, d);
  detail::check_logreg_shapes(data, prior, q);
  Vector g = detail::neg_kl_grad_constrained(prior, q);
  if (!batch.empty()) {
    const double scale = static_cast<double>(data.size()) / static_cast<double>(batch.size());
    for (std::size_t n : batch) {
      if (n >= data.size()) throw validation_error("grad_elbo_jj: record index out of range");
      detail::add_record_grad(data.X.row(n), data.y[n], q, scale, g);
    }
  }
  detail::apply_diag_chain(theta, d, g);
  return g;
}

inline Vector grad_elbo_jj(const LogRegDataset& data, const LogRegPrior& prior,
                           std::span<const double> theta) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return grad_elbo_jj_minibatch(all, data, prior, theta);
}

struct OptimConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 200;
  std::size_t batch_size = 100;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;
  double beta2 = 0.999;
  double decay = 0.0;  // step size at epoch e is lr / (1 + decay * e)
  std::uint64_t seed = 0;
  std::size_t mc_samples = 1;  // reparameterization baseline
  std::size_t max_iters = 500;  // VB-EM
  double tol = 1e-8;            // VB-EM; negative runs all max_iters

  void validate(std::size_t n) const {
    if (!(learning_rate > 0.0)) throw validation_error("learning_rate must be > 0");
    if (epochs < 1) throw validation_error("epochs must be >= 1");
    if (batch_size < 1 || batch_size > n)
      throw validation_error("batch_size must be in [1, N] (N = " + std::to_string(n) + ")");
    if (mc_samples < 1) throw validation_error("mc_samples must be >= 1");
    if (decay < 0.0) throw validation_error("decay must be >= 0");
  }
};

struct TraceRow {
  std::size_t epoch = 0;
  BoundReport bound;
  double wall_ms = 0.0;
};

struct LogRegFit {
  GaussianVariational q;
  std::vector<TraceRow> trace;
};

namespace detail {
using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

inline void check_finite(const BoundReport& r, std::size_t epoch, const char* who) {
  if (!std::isfinite(r.value))
    throw numerical_error(std::string(who) + ": bound became non-finite at epoch " +
                          std::to_string(epoch) + " (kl=" + std::to_string(r.kl_term) +
                          ", lik=" + std::to_string(r.lik_term) + ")");
}

inline void check_finite(std::span<const double> v, std::size_t epoch, const char* who) {
  for (double x : v)
    if (!std::isfinite(x))
      throw numerical_error(std::string(who) + ": parameters diverged at epoch " +
                            std::to_string(epoch) + "; lower the learning rate");
}

template <typename GradFn, typename ReportFn>
LogRegFit run_minibatch_ascent(const LogRegDataset& data, const LogRegPrior& prior,
                               const OptimConfig& config, const char* who, GradFn&& grad,
                               ReportFn&& report) {
  data.validate();
  config.validate(data.size());
  require_same_size(data.dim(), prior.dim(), who);
  const std::size_t d = prior.dim();

  SeededRng rng(config.seed);
  Vector theta = GaussianVariational::from_prior(prior).to_free();
  Optimizer opt(config.optimizer, theta.size(), config.momentum, config.beta2);

  LogRegFit fit;
  fit.trace.push_back({0, report(GaussianVariational::from_free(theta, d), rng), 0.0});
  check_finite(fit.trace.back().bound, 0, who);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double train_ms = 0.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = Clock::now();
    rng.shuffle(order);
    const double lr = scheduled_rate(config.learning_rate, config.decay, epoch - 1);
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t e = std::min(order.size(), b + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + b, e - b);
      try {
        const Vector g = grad(batch, theta, rng);
        opt.step(theta, g, lr);
      } catch (const domain_error& e) {
        throw numerical_error(std::string(who) + ": parameters diverged at epoch " +
                              std::to_string(epoch) + " (" + e.what() + "); lower the learning rate");
      }
      check_finite(theta, epoch, who);
    }
    train_ms += elapsed_ms(start);
    fit.trace.push_back({epoch, report(GaussianVariational::from_free(theta, d), rng), train_ms});
    check_finite(fit.trace.back().bound, epoch, who);
  }
  fit.q = GaussianVariational::from_free(theta, d);
  return fit;
}
}  // namespace detail

// SGD on the minibatch JJ bound. Trace row e holds the exact bound after
// epoch e (row 0 is the initialization q = prior).
inline LogRegFit fit_sgd_jj(const LogRegDataset& data, const LogRegPrior& prior,
                            const OptimConfig& config) {
  return detail::run_minibatch_ascent(
      data, prior, config, "fit_sgd_jj",
      [&](std::span<const std::size_t> batch, std::span<const double> theta, SeededRng&) {
        return grad_elbo_jj_minibatch(batch, data, prior, theta);
      },
      [&](const GaussianVariational& q, SeededRng&) { return elbo_jj(data, prior, q); });
}

// Coordinate ascent on the JJ bound:
//   Σ_q⁻¹ = Σ_β⁻¹ + 2 Σ_n |A(ζ_n)| x_n x_nᵀ
//   μ_q   = Σ_q (Σ_β⁻¹ μ_β + Σ_n (y_n - 1/2) x_n)
// followed by the closed-form ζ. Each step maximizes the bound in one block,
// so the trace is nondecreasing. Trace row i is the bound after iteration i.
inline LogRegFit fit_vbem(const LogRegDataset& data, const LogRegPrior& prior,
                          const OptimConfig& config) {
  data.validate();
  require_same_size(data.dim(), prior.dim(), "fit_vbem");
  const std::size_t d = prior.dim();
  const std::size_t n = data.size();
  const Matrix& prec = prior.precision();

  Vector rhs(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) rhs[i] += prec(i, j) * prior.mean()[j];
  for (std::size_t r = 0; r < n; ++r) {
    const double c = static_cast<double>(data.y[r]) - 0.5;
    for (std::size_t i = 0; i < d; ++i) rhs[i] += c * data.X(r, i);
  }

  LogRegFit fit;
  fit.q = GaussianVariational::from_prior(prior);
  fit.trace.push_back({0, elbo_jj(data, prior, fit.q), 0.0});
  detail::check_finite(fit.trace.back().bound, 0, "fit_vbem");

  const auto start = detail::Clock::now();
  for (std::size_t iter = 1; iter <= config.max_iters; ++iter) {
    Matrix post_prec = prec;
    for (std::size_t r = 0; r < n; ++r) {
      const auto x = data.X.row(r);
      const double w = 2.0 * std::abs(jj_A(zeta_closed_form(x, fit.q)));
      for (std::size_t i = 0; i < d; ++i) {
        const double wx = w * x[i];
        for (std::size_t j = 0; j <= i; ++j) post_prec(i, j) += wx * x[j];
      }
    }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < i; ++j) post_prec(j, i) = post_prec(i, j);

    CovFactor prec_factor;
    try {
      prec_factor = cholesky(post_prec);
    } catch (const decomposition_error& e) {
      throw decomposition_error(e.pivot, std::string("fit_vbem: singular posterior precision: ") +
                                             e.what());
    }
    fit.q.mu = prec_factor.solve(rhs);
    fit.q.cov = cholesky(prec_factor.inverse());

    const double previous = fit.trace.back().bound.value;
    fit.trace.push_back({iter, elbo_jj(data, prior, fit.q), detail::elapsed_ms(start)});
    detail::check_finite(fit.trace.back().bound, iter, "fit_vbem");
    if (config.tol >= 0.0 && fit.trace.back().bound.value - previous < config.tol) break;
  }
  return fit;
}

// Single-draw local reparameterization estimate of the exact ELBO: each
// activation is sampled as z_n = m_n + sqrt(v_n) ε_n and scored with
// log σ((2y_n - 1) z_n). `samples` draws per record are averaged.
inline BoundReport lrt_objective(const LogRegDataset& data, const LogRegPrior& prior,
                                 const GaussianVariational& q, SeededRng& rng,
                                 std::size_t samples = 1) {
  detail::check_logreg_shapes(data, prior, q);
  BoundReport r;
  r.kl_term = gaussian_kl(q.mu, q.cov, prior.mean(), prior.cov());
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto x = data.X.row(n);
    const double m = dot(x, q.mu);
    const double sd = std::sqrt(q.cov.quad_form(x));
    const double sign = data.y[n] == 1 ? 1.0 : -1.0;
    double acc = 0.0;
    for (std::size_t s = 0; s < samples; ++s) acc += log_sigmoid(sign * (m + sd * rng.normal()));
    r.lik_term += acc / static_cast<double>(samples);
  }
  r.value = r.lik_term - r.kl_term;
  return r;
}

// Gradient of the reparameterized minibatch estimate w.r.t. the free parameters.
inline Vector grad_lrt_minibatch(std::span<const std::size_t> batch, const LogRegDataset& data,
                                 const LogRegPrior& prior, std::span<const double> theta,
                                 SeededRng& rng, std::size_t samples) {
  const std::size_t d = prior.dim();
  const GaussianVariational q = GaussianVariational::from_free(theta, d);
  Vector g = detail::neg_kl_grad_constrained(prior, q);
  const double scale = static_cast<double>(data.size()) /
                       (static_cast<double>(batch.size()) * static_cast<double>(samples));
  for (std::size_t n : batch) {
    const auto x = data.X.row(n);
    const double m = dot(x, q.mu);
    const Vector w = q.cov.mul_lower_transpose(x);
    const double sd = std::sqrt(squared_norm(w));
    const double sign = data.y[n] == 1 ? 1.0 : -1.0;
    double gm = 0.0;
    double gs = 0.0;  // derivative through sd, divided by sd
    for (std::size_t s = 0; s < samples; ++s) {
      const double eps = rng.normal();
      const double dz = sign * sigmoid(-sign * (m + sd * eps));
      gm += dz;
      if (sd > 0.0) gs += dz * eps / sd;
    }
    gm *= scale;
    gs *= scale;
    for (std::size_t i = 0; i < d; ++i) g[i] += gm * x[i];
    std::size_t k = d;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j, ++k) g[k] += gs * x[i] * w[j];
  }
  detail::apply_diag_chain(theta, d, g);
  return g;
}

// SGD with the local reparameterization estimator. Trace rows hold a fresh
// single-draw estimate of the ELBO after each epoch, so they are noisy.
inline LogRegFit fit_lrt(const LogRegDataset& data, const LogRegPrior& prior,
                         const OptimConfig& config) {
  return detail::run_minibatch_ascent(
      data, prior, config, "fit_lrt",
      [&](std::span<const std::size_t> batch, std::span<const double> theta, SeededRng& rng) {
        return grad_lrt_minibatch(batch, data, prior, theta, rng, config.mc_samples);
      },
      [&](const GaussianVariational& q, SeededRng& rng) {
        return lrt_objective(data, prior, q, rng, config.mc_samples);
      });
}

// Probit-approximated predictive probability σ(m / sqrt(1 + π v / 8)).
inline double predict_proba(const GaussianVariational& q, std::span<const double> x) {
  const double m = dot(x, q.mu);
  const double v = q.cov.quad_form(x);
  return sigmoid(m / std::sqrt(1.0 + std::numbers::pi * v / 8.0));
}

}  // namespace avb
