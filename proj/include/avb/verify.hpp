#pragma once

// Property suites backing the `verify` command. Each check reports the worst
// observed error against a fixed tolerance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "avb/errors.hpp"
#include "avb/kernels.hpp"
#include "avb/linalg.hpp"
#include "avb/logreg.hpp"
#include "avb/lvm.hpp"
#include "avb/oracle.hpp"
#include "avb/rng.hpp"
#include "json.hpp"

namespace avb {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::size_t cases = 0;
  std::size_t violations = 0;
  double worst = 0.0;  // largest error (or most negative margin) seen
  double tolerance = 0.0;
  std::string detail;
};

inline nlohmann::ordered_json to_json(const CheckResult& c) {
  nlohmann::ordered_json j;
  j["name"] = c.name;
  j["passed"] = c.passed;
  j["cases"] = c.cases;
  j["violations"] = c.violations;
  j["worst"] = c.worst;
  j["tolerance"] = c.tolerance;
  if (!c.detail.empty()) j["detail"] = c.detail;
  return j;
}

// Relative error used by the gradient checks.
inline double scaled_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// ------------------------------------------------------------ random fixtures

inline LogRegDataset random_logreg_data(SeededRng& rng, std::size_t n, std::size_t d,
                                        double feature_scale = 1.0) {
  LogRegDataset data;
  data.X = Matrix(n, d);
  data.y.resize(n);
  Vector beta(d);
  for (double& b : beta) b = rng.normal();
  for (std::size_t r = 0; r < n; ++r) {
    for (double& x : data.X.row(r)) x = feature_scale * rng.normal();
    data.y[r] = rng.bernoulli(sigmoid(dot(data.X.row(r), beta))) ? 1 : 0;
  }
  return data;
}

inline LogRegPrior random_prior(SeededRng& rng, std::size_t d) {
  Vector mean(d);
  for (double& m : mean) m = 0.5 * rng.normal();
  Matrix l(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) l(i, j) = 0.3 * rng.normal();
    l(i, i) = 0.5 + rng.uniform();
  }
  return {mean, CovFactor::from_cholesky(l)};
}

inline GaussianVariational random_posterior(SeededRng& rng, std::size_t d) {
  Vector theta(GaussianVariational::free_size(d));
  for (double& t : theta) t = 0.5 * rng.normal();
  return GaussianVariational::from_free(theta, d);
}

inline Session random_session(SeededRng& rng, std::size_t p, std::size_t length) {
  Session s(length);
  for (auto& v : s) v = rng.uniform_index(p);
  return s;
}

inline LvmParams random_lvm_params(SeededRng& rng, std::size_t p, std::size_t k) {
  LvmParams m = LvmParams::zeros(p, k);
  Vector flat(m.flat_size());
  for (double& v : flat) v = 0.5 * rng.normal();
  m.assign_flat(flat);
  return m;
}

// ---------------------------------------------------------------- bounds

inline CheckResult check_jj_tangency(std::size_t points = 1000, double tol = 1e-12) {
  CheckResult c{"jj_tangency", false, points, 0, 0.0, tol, "|jj_quad_upper(m, 0, |m|) - log1pexp(m)| on [-20, 20]"};
  for (std::size_t i = 0; i < points; ++i) {
    const double m = -20.0 + 40.0 * static_cast<double>(i) / static_cast<double>(points - 1);
    const double err = std::abs(jj_quad_upper(m, 0.0, std::abs(m)) - log1pexp(m));
    c.worst = std::max(c.worst, err);
    if (err > tol) ++c.violations;
  }
  c.passed = c.violations == 0;
  return c;
}

// Random logits, location and tangent points; the bound must dominate
// logsumexp up to rounding of the summation.
inline CheckResult check_bouchard_dominance(std::uint64_t seed = 3, std::size_t instances = 1000) {
  constexpr double kRounding = 1e-12;
  CheckResult c{"bouchard_dominance", false, instances, 0, 0.0, kRounding, "min(upper - logsumexp)"};
  SeededRng rng(seed);
  c.worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t p = 1 + rng.uniform_index(16);
    Vector x(p), xi(p);
    for (double& v : x) v = 3.0 * rng.normal();
    const double a = 2.0 * rng.normal();
    for (std::size_t j = 0; j < p; ++j)
      xi[j] = (i % 2 == 0) ? std::abs(x[j] - a) : 4.0 * rng.uniform();
    const double lse = logsumexp(x);
    const double gap = bouchard_lse_upper(x, a, xi) - lse;
    c.worst = std::min(c.worst, gap);
    if (gap < -kRounding * std::max(1.0, std::abs(lse))) ++c.violations;
  }
  c.passed = c.violations == 0;
  return c;
}

// elbo_jj at the VB-EM optimum and at a random q never exceeds the
// quadrature log marginal likelihood.
inline CheckResult check_elbo_below_marginal(std::uint64_t seed = 5, std::size_t instances = 20,
                                             double tol = 1e-6) {
  CheckResult c{"elbo_below_log_marginal", false, 2 * instances, 0, 0.0, tol,
                "min(log p(y) - elbo_jj), D in {1, 2}, N <= 50"};
  SeededRng rng(seed);
  c.worst = std::numeric_limits<double>::infinity();
  OptimConfig em;
  em.max_iters = 200;
  em.tol = 1e-12;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t d = 1 + i % 2;
    const std::size_t n = 1 + rng.uniform_index(50);
    const LogRegDataset data = random_logreg_data(rng, n, d);
    const LogRegPrior prior = random_prior(rng, d);
    const double log_z = quadrature_log_marginal(data, prior);
    for (const GaussianVariational& q :
         {fit_vbem(data, prior, em).q, random_posterior(rng, d)}) {
      const double margin = log_z - elbo_jj(data, prior, q).value;
      c.worst = std::min(c.worst, margin);
      if (margin < -tol) ++c.violations;
    }
  }
  c.passed = c.violations == 0;
  return c;
}

// The exact ELBO (activation integrals by Gauss-Hermite) dominates elbo_jj.
inline CheckResult check_exact_elbo_above_jj(std::uint64_t seed = 7, std::size_t points = 20) {
  constexpr double kQuadrature = 1e-9;
  CheckResult c{"exact_elbo_above_jj", false, points, 0, 0.0, kQuadrature,
                "min(exact ELBO - elbo_jj) over shared random q"};
  SeededRng rng(seed);
  const LogRegDataset data = random_logreg_data(rng, 60, 3);
  const LogRegPrior prior = LogRegPrior::standard(3);
  c.worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points; ++i) {
    const GaussianVariational q = random_posterior(rng, 3);
    const double gap = quadrature_exact_elbo(data, prior, q) - elbo_jj(data, prior, q).value;
    c.worst = std::min(c.worst, gap);
    if (gap < -kQuadrature) ++c.violations;
  }
  c.passed = c.violations == 0;
  return c;
}

// ------------------------------------------------------------- gradients

inline CheckResult check_grad_elbo_jj(std::uint64_t seed = 11, std::size_t instances = 10,
                                      double tol = 1e-5) {
  CheckResult c{"grad_elbo_jj_vs_finite_differences", false, instances, 0, 0.0, tol,
                "max |analytic - central difference| / max(1, |a|, |b|)"};
  SeededRng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t d = 1 + rng.uniform_index(3);
    const LogRegDataset data = random_logreg_data(rng, 2 + rng.uniform_index(20), d);
    const LogRegPrior prior = random_prior(rng, d);
    const Vector theta = random_posterior(rng, d).to_free();
    const Vector g = grad_elbo_jj(data, prior, theta);
    const Vector fd = finite_diff_grad(
        [&](std::span<const double> t) {
          return elbo_jj(data, prior, GaussianVariational::from_free(t, d)).value;
        },
        theta);
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double err = scaled_error(g[j], fd[j]);
      c.worst = std::max(c.worst, err);
      if (err > tol) ++c.violations;
    }
  }
  c.passed = c.violations == 0;
  return c;
}

inline CheckResult check_grad_noisy_bound(std::uint64_t seed = 13, std::size_t instances = 10,
                                          double tol = 1e-5) {
  CheckResult c{"grad_noisy_bound_vs_finite_differences", false, instances, 0, 0.0, tol,
                "max |analytic - central difference| / max(1, |a|, |b|)"};
  SeededRng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t p = 2 + rng.uniform_index(5);
    const std::size_t k = 1 + rng.uniform_index(3);
    const LvmParams params = random_lvm_params(rng, p, k);
    const Session session = random_session(rng, p, 1 + rng.uniform_index(5));
    const auto negatives = rng.sample_without_replacement(p, 1 + rng.uniform_index(p));
    const Vector g = grad_noisy_bound(session, negatives, params).to_flat(params);
    LvmParams probe = params;
    const Vector fd = finite_diff_grad(
        [&](std::span<const double> f) {
          probe.assign_flat(f);
          return noisy_bound(session, negatives, probe);
        },
        params.flatten());
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double err = scaled_error(g[j], fd[j]);
      c.worst = std::max(c.worst, err);
      if (err > tol) ++c.violations;
    }
  }
  c.passed = c.violations == 0;
  return c;
}

// ----------------------------------------------------------- unbiasedness

// Mean of elbo_jj_minibatch over every batch of every size equals elbo_jj.
inline CheckResult check_minibatch_unbiased(std::uint64_t seed = 17, std::size_t instances = 5,
                                            double tol = 1e-10) {
  CheckResult c{"minibatch_elbo_unbiased", false, 0, 0, 0.0, tol,
                "max |E_B[minibatch ELBO] - elbo_jj| over all |B|, N <= 5"};
  SeededRng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = 1 + i % 5;
    const std::size_t d = 1 + rng.uniform_index(3);
    const LogRegDataset data = random_logreg_data(rng, n, d);
    const LogRegPrior prior = random_prior(rng, d);
    const GaussianVariational q = random_posterior(rng, d);
    const double full = elbo_jj(data, prior, q).value;
    for (std::size_t b = 1; b <= n; ++b) {
      const double mean = enumerate_subset_expectation(
          [&](std::span<const std::size_t> batch) {
            return elbo_jj_minibatch(batch, data, prior, q);
          },
          n, b);
      const double err = std::abs(mean - full);
      ++c.cases;
      c.worst = std::max(c.worst, err);
      if (err > tol) ++c.violations;
    }
  }
  c.passed = c.violations == 0;
  return c;
}

// U times the mean of noisy_bound over sessions and all S-subsets equals
// full_bound, for every S.
inline CheckResult check_negative_sampling_unbiased(std::uint64_t seed = 19,
                                                    std::size_t instances = 5, double tol = 1e-10) {
  CheckResult c{"negative_sampling_unbiased", false, 0, 0, 0.0, tol,
                "max |U E[noisy_bound] - full_bound| over S in 1..P, P <= 6"};
  SeededRng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t p = 2 + i % 5;
    const std::size_t k = 1 + rng.uniform_index(3);
    const LvmParams params = random_lvm_params(rng, p, k);
    SessionDataset data;
    data.catalog_size = p;
    for (std::size_t u = 0; u < 4; ++u) data.sessions.push_back(random_session(rng, p, 1 + rng.uniform_index(4)));
    const double full = full_bound(data, params).value;
    for (std::size_t s = 1; s <= p; ++s) {
      double total = 0.0;
      for (const auto& session : data.sessions)
        total += enumerate_subset_expectation(
            [&](std::span<const std::size_t> neg) { return noisy_bound(session, neg, params); }, p, s);
      const double err = std::abs(total - full);
      ++c.cases;
      c.worst = std::max(c.worst, err);
      if (err > tol) ++c.violations;
    }
  }
  c.passed = c.violations == 0;
  return c;
}

// The same identity for the gradient of one session.
inline CheckResult check_negative_sampling_grad_unbiased(std::uint64_t seed = 23,
                                                         double tol = 1e-10) {
  CheckResult c{"negative_sampling_gradient_unbiased", false, 0, 0, 0.0, tol,
                "max |E[grad noisy_bound] - grad session bound| per coordinate"};
  SeededRng rng(seed);
  const std::size_t p = 5, k = 2;
  const LvmParams params = random_lvm_params(rng, p, k);
  const Session session = random_session(rng, p, 3);
  const Vector exact = grad_session_bound(session, params).to_flat(params);
  for (std::size_t s = 1; s <= p; ++s) {
    for (std::size_t j = 0; j < exact.size(); ++j) {
      const double mean = enumerate_subset_expectation(
          [&](std::span<const std::size_t> neg) {
            return grad_noisy_bound(session, neg, params).to_flat(params)[j];
          },
          p, s);
      const double err = std::abs(mean - exact[j]);
      ++c.cases;
      c.worst = std::max(c.worst, err);
      if (err > tol) ++c.violations;
    }
  }
  c.passed = c.violations == 0;
  return c;
}

// ----------------------------------------------------------------- suites

inline std::vector<CheckResult> run_suite(const std::string& suite) {
  std::vector<CheckResult> out;
  const bool all = suite == "all";
  if (!all && suite != "bounds" && suite != "gradients" && suite != "unbiasedness")
    throw validation_error("unknown suite '" + suite + "' (bounds|gradients|unbiasedness|all)");
  if (all || suite == "bounds") {
    out.push_back(check_jj_tangency());
    out.push_back(check_bouchard_dominance());
    out.push_back(check_elbo_below_marginal());
    out.push_back(check_exact_elbo_above_jj());
  }
  if (all || suite == "gradients") {
    out.push_back(check_grad_elbo_jj());
    out.push_back(check_grad_noisy_bound());
  }
  if (all || suite == "unbiasedness") {
    out.push_back(check_minibatch_unbiased());
    out.push_back(check_negative_sampling_unbiased());
    out.push_back(check_negative_sampling_grad_unbiased());
  }
  return out;
}

}  // namespace avb
