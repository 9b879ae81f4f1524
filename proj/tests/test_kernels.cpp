#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "avb/kernels.hpp"
#include "avb/rng.hpp"

using namespace avb;

namespace {
const double kLn2 = std::numbers::ln2;
}

TEST(Log1pexp, ReferencePoints) {
  EXPECT_DOUBLE_EQ(log1pexp(0.0), kLn2);
  EXPECT_DOUBLE_EQ(log1pexp(1000.0), 1000.0);
  // mpmath, 40 digits
  EXPECT_NEAR(log1pexp(-40.0), 4.248354255291588986e-18, 1e-32);
  EXPECT_NEAR(log1pexp(-745.0), 0.0, 1e-300);
  EXPECT_DOUBLE_EQ(log1pexp(700.0), 700.0);
}

TEST(Log1pexp, FiniteOnWideDomain) {
  for (double x = -700.0; x <= 700.0; x += 0.7) {
    EXPECT_TRUE(std::isfinite(log1pexp(x)));
    EXPECT_TRUE(std::isfinite(log_sigmoid(x)));
  }
}

TEST(Softplus, InverseRoundTrip) {
  for (double x : {1e-8, 0.01, 0.5, 1.0, 3.0, 40.0, 500.0})
    EXPECT_NEAR(softplus(softplus_inv(x)), x, 1e-12 * std::max(1.0, x));
  EXPECT_THROW(softplus_inv(0.0), domain_error);
}

TEST(Logsumexp, StableForLargeInputs) {
  const Vector x{1000.0, 1000.0};
  EXPECT_DOUBLE_EQ(logsumexp(x), 1000.0 + kLn2);
  const Vector y{1.0, -1.0, 0.0};
  EXPECT_NEAR(logsumexp(y), std::log(std::exp(1.0) + std::exp(-1.0) + 1.0), 1e-15);
}

TEST(JjA, LimitAndReference) {
  EXPECT_DOUBLE_EQ(jj_A(0.0), -0.125);
  EXPECT_NEAR(jj_A(1e-6), -0.125, 1e-13);
  EXPECT_NEAR(jj_A(2.0), -std::tanh(1.0) / 8.0, 1e-16);
  EXPECT_NEAR(jj_A(2.0), -0.09519926949447061, 1e-16);  // mpmath
}

TEST(JjA, RangeAndContinuityAtSeriesCutoff) {
  for (double z = 0.0; z <= 700.0; z += 0.37) {
    const double a = jj_A(z);
    EXPECT_LT(a, 0.0);
    EXPECT_GE(a, -0.125);
  }
  EXPECT_NEAR(jj_A(1e-4 * (1 - 1e-12)), jj_A(1e-4 * (1 + 1e-12)), 1e-15);
  EXPECT_THROW(jj_A(-1.0), domain_error);
}

TEST(JjC, Reference) {
  EXPECT_NEAR(jj_C(0.0), -kLn2, 1e-16);
  EXPECT_NEAR(jj_C(2.0), -0.746130933065090052, 1e-15);  // mpmath
  EXPECT_TRUE(std::isfinite(jj_C(50.0)));
  EXPECT_TRUE(std::isfinite(jj_C(700.0)));
  EXPECT_THROW(jj_C(-0.5), domain_error);
}

TEST(JjQuadUpper, TangentWhereZetaMatches) {
  EXPECT_NEAR(jj_quad_upper(0.0, 0.0, 0.0), kLn2, 1e-15);
  for (double x : {-3.0, -1.0, 0.5, 4.0})
    EXPECT_NEAR(jj_quad_upper(x, 0.0, std::abs(x)), log1pexp(x), 1e-12) << x;
}

TEST(JjQuadUpper, StrictlyAboveAwayFromTangent) {
  EXPECT_GT(jj_quad_upper(1.0, 0.0, 3.0), log1pexp(1.0));
  EXPECT_THROW(jj_quad_upper(1.0, -1e-3, 1.0), domain_error);
}

TEST(JjQuadUpper, DominatesOnGrid) {
  for (double m = -10.0; m <= 10.0; m += 0.25)
    for (double z = 0.0; z <= 10.0; z += 0.25) {
      const double gap = jj_quad_upper(m, 0.0, z) - log1pexp(m);
      EXPECT_GE(gap, -1e-12) << m << " " << z;
      if (std::abs(z - std::abs(m)) > 0.1) {
        EXPECT_GT(gap, 1e-12) << m << " " << z;
      }
    }
}

TEST(LambdaJj, LimitAndReference) {
  EXPECT_DOUBLE_EQ(lambda_jj(0.0), 0.125);
  EXPECT_NEAR(lambda_jj(2.0), 0.25 * (sigmoid(2.0) - 0.5), 1e-16);
  EXPECT_NEAR(lambda_jj(2.0), 0.09519926949447061, 1e-16);  // mpmath
  EXPECT_NEAR(lambda_jj(1e-4 * (1 - 1e-12)), lambda_jj(1e-4 * (1 + 1e-12)), 1e-15);
  EXPECT_THROW(lambda_jj(-2.0), domain_error);
}

TEST(LambdaJj, DecreasingOnGrid) {
  double prev = lambda_jj(0.0);
  for (int i = 1; i <= 1000; ++i) {
    const double cur = lambda_jj(0.01 * i);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(BouchardUpper, ZeroLogits) {
  const Vector x{0.0, 0.0}, xi{0.0, 0.0};
  EXPECT_NEAR(bouchard_lse_upper(x, 0.0, xi), 2.0 * kLn2, 1e-15);
  EXPECT_GE(bouchard_lse_upper(x, 0.0, xi), logsumexp(x));
}

TEST(BouchardUpper, OneRoundOfTightening) {
  // Starting from a = 0: ξ_p = |x_p|, a from its stationary condition, then
  // ξ_p = |x_p - a|.
  const Vector x{1.0, -1.0, 0.0};
  Vector xi{1.0, 1.0, 0.0};
  double num = 0.5 * (3.0 / 2.0 - 1.0), den = 0.0;
  for (std::size_t p = 0; p < 3; ++p) {
    num += lambda_jj(xi[p]) * x[p];
    den += lambda_jj(xi[p]);
  }
  const double a = num / den;
  for (std::size_t p = 0; p < 3; ++p) xi[p] = std::abs(x[p] - a);
  const double upper = bouchard_lse_upper(x, a, xi);
  // mpmath reference values; the gap is larger than 0.5 nats.
  EXPECT_NEAR(a, 0.7021316575545433, 1e-14);
  EXPECT_NEAR(upper, 2.1251992441317453, 1e-13);
  EXPECT_NEAR(upper - logsumexp(x), 0.71759327968736460, 1e-13);
}

TEST(BouchardUpper, DominatesRandomInstances) {
  SeededRng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    Vector x(8), xi(8);
    for (double& v : x) v = 2.0 * rng.normal();
    for (double& v : xi) v = 5.0 * rng.uniform();
    const double a = rng.normal();
    EXPECT_GE(bouchard_lse_upper(x, a, xi), logsumexp(x) - 1e-12);
  }
}

TEST(BouchardUpper, RejectsNegativeXi) {
  const Vector x{0.0, 1.0}, xi{0.1, -0.1};
  EXPECT_THROW(bouchard_lse_upper(x, 0.0, xi), domain_error);
}

TEST(GaussianKl, Reference) {
  const Vector zero{0.0};
  EXPECT_NEAR(gaussian_kl(zero, CovFactor::identity(1), zero, CovFactor::diagonal({2.0})),
              0.0965735902799726547, 1e-15);  // ½ ln 2 + ¼ − ½
}

TEST(GaussianKl, SelfDivergenceIsZero) {
  Matrix l(3, 3);
  l(0, 0) = 1.2;
  l(1, 0) = 0.3;
  l(1, 1) = 0.7;
  l(2, 0) = -0.4;
  l(2, 1) = 0.1;
  l(2, 2) = 2.0;
  const CovFactor s = CovFactor::from_cholesky(l);
  const Vector mu{0.5, -1.0, 2.0};
  EXPECT_NEAR(gaussian_kl(mu, s, mu, s), 0.0, 1e-12);
}

TEST(GaussianKl, NonnegativeForRandomPairs) {
  SeededRng rng(5);
  auto random_factor = [&] {
    Matrix l(4, 4);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < i; ++j) l(i, j) = rng.normal();
      l(i, i) = 0.2 + rng.uniform();
    }
    return CovFactor::from_cholesky(l);
  };
  for (int trial = 0; trial < 100; ++trial) {
    Vector mq(4), mp(4);
    for (double& v : mq) v = rng.normal();
    for (double& v : mp) v = rng.normal();
    EXPECT_GE(gaussian_kl(mq, random_factor(), mp, random_factor()), 0.0);
  }
}

TEST(GaussianKl, DiagonalMatchesFullFactor) {
  const Vector mq{0.3, -0.2}, mp{0.0, 1.0};
  Matrix lq(2, 2), lp(2, 2);
  lq(0, 0) = std::sqrt(0.5);
  lq(1, 1) = std::sqrt(2.0);
  lp(0, 0) = std::sqrt(1.5);
  lp(1, 1) = std::sqrt(0.25);
  EXPECT_NEAR(gaussian_kl(mq, CovFactor::diagonal({0.5, 2.0}), mp, CovFactor::diagonal({1.5, 0.25})),
              gaussian_kl(mq, CovFactor::from_cholesky(lq), mp, CovFactor::from_cholesky(lp)),
              1e-14);
}
