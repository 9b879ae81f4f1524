#include <gtest/gtest.h>

#include <cmath>

#include "avb/linalg.hpp"
#include "avb/rng.hpp"

using namespace avb;

namespace {

Matrix random_spd(std::size_t d, SeededRng& rng) {
  Matrix m(d, d);
  for (double& v : m.data()) v = rng.normal();
  Matrix a = matmul(m, m.transpose());
  for (std::size_t i = 0; i < d; ++i) a(i, i) += 1.0;
  return a;
}

}  // namespace

TEST(Cholesky, IdentityAndDiagonal) {
  EXPECT_EQ(cholesky(Matrix::identity(3)).lower(), Matrix::identity(3));
  Matrix a(2, 2);
  a(0, 0) = 4.0;
  a(1, 1) = 9.0;
  const Matrix l = cholesky(a).lower();
  EXPECT_DOUBLE_EQ(l(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(l(1, 1), 3.0);
  EXPECT_DOUBLE_EQ(l(1, 0), 0.0);
}

TEST(Cholesky, ReconstructsRandomSpd) {
  SeededRng rng(1);
  const Matrix a = random_spd(6, rng);
  const Matrix l = cholesky(a).lower();
  const Matrix back = matmul(l, l.transpose());
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(back(i, j), a(i, j), 1e-10);
}

TEST(Cholesky, NamesFailingPivot) {
  Matrix a = Matrix::identity(3);
  a(2, 2) = -1.0;
  try {
    cholesky(a);
    FAIL() << "expected decomposition_error";
  } catch (const decomposition_error& e) {
    EXPECT_EQ(e.pivot, 2u);
  }
  Matrix b(2, 2, 1.0);  // singular
  EXPECT_THROW(cholesky(b), decomposition_error);
}

TEST(CovFactor, RejectsInvalidFactors) {
  Matrix upper(2, 2);
  upper(0, 0) = 1.0;
  upper(0, 1) = 0.5;
  upper(1, 1) = 1.0;
  EXPECT_THROW(CovFactor::from_cholesky(upper), domain_error);
  EXPECT_THROW(CovFactor::diagonal({1.0, 0.0}), domain_error);
  EXPECT_THROW(CovFactor::from_cholesky(Matrix(2, 3)), shape_error);
}

TEST(QuadForm, SimpleCases) {
  const CovFactor id = CovFactor::identity(3);
  EXPECT_DOUBLE_EQ(quad_form(Vector{1.0, 0.0, 0.0}, id), 1.0);
  EXPECT_DOUBLE_EQ(quad_form(Vector(3, 0.0), id), 0.0);
  EXPECT_THROW(quad_form(Vector{1.0, 2.0}, id), shape_error);
}

TEST(QuadForm, MatchesDenseProduct) {
  SeededRng rng(2);
  const Matrix a = random_spd(5, rng);
  const CovFactor s = cholesky(a);
  Vector x(5);
  for (double& v : x) v = rng.normal();
  const Vector ax = matvec(a, x);
  EXPECT_NEAR(quad_form(x, s), dot(x, ax), 1e-12 * std::max(1.0, dot(x, ax)));
}

TEST(CovFactor, DenseInverseLogdetTraceAgree) {
  SeededRng rng(3);
  const Matrix a = random_spd(4, rng);
  const CovFactor s = cholesky(a);
  const Matrix dense = s.dense();
  const Matrix inv = s.inverse();
  const Matrix prod = matmul(dense, inv);
  double tr = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    tr += a(i, i);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(dense(i, j), a(i, j), 1e-10);
      EXPECT_NEAR(prod(i, j), i == j ? 1.0 : 0.0, 1e-10);
    }
  }
  EXPECT_NEAR(s.trace(), tr, 1e-10);
  double logdet = 0.0;
  for (std::size_t i = 0; i < 4; ++i) logdet += 2.0 * std::log(s.lower()(i, i));
  EXPECT_NEAR(s.logdet(), logdet, 1e-12);
}

TEST(CovFactor, SolvesAgainstDense) {
  SeededRng rng(4);
  const Matrix a = random_spd(4, rng);
  const CovFactor s = cholesky(a);
  Vector b(4);
  for (double& v : b) v = rng.normal();
  const Vector x = s.solve(b);
  const Vector back = matvec(a, x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(back[i], b[i], 1e-10);
  const Vector y = s.solve_lower(b);
  const Vector ly = s.mul_lower(y);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(ly[i], b[i], 1e-12);
  const Vector z = s.solve_lower_transpose(b);
  const Vector ltz = s.mul_lower_transpose(z);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(ltz[i], b[i], 1e-12);
}

TEST(CovFactor, DiagonalBehavesLikeFull) {
  const CovFactor d = CovFactor::diagonal({0.5, 2.0, 3.0});
  Matrix l(3, 3);
  l(0, 0) = std::sqrt(0.5);
  l(1, 1) = std::sqrt(2.0);
  l(2, 2) = std::sqrt(3.0);
  const CovFactor f = CovFactor::from_cholesky(l);
  const Vector x{1.0, -2.0, 0.5};
  EXPECT_NEAR(d.quad_form(x), f.quad_form(x), 1e-14);
  EXPECT_NEAR(d.logdet(), f.logdet(), 1e-14);
  EXPECT_NEAR(d.trace(), f.trace(), 1e-14);
  const Vector sd = d.solve(x), sf = f.solve(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(sd[i], sf[i], 1e-14);
}

TEST(SampleGaussian, DegenerateCovarianceReturnsMean) {
  SeededRng rng(5);
  const Vector mu{1.0, -2.0};
  const Vector s = sample_gaussian(mu, CovFactor::diagonal({1e-300, 1e-300}), rng);
  EXPECT_NEAR(s[0], 1.0, 1e-100);
  EXPECT_NEAR(s[1], -2.0, 1e-100);
}

TEST(SampleGaussian, DeterministicForSeed) {
  const Vector mu{0.0, 1.0, 2.0};
  SeededRng a(11), b(11);
  EXPECT_EQ(sample_gaussian(mu, CovFactor::identity(3), a),
            sample_gaussian(mu, CovFactor::identity(3), b));
}

TEST(SampleGaussian, EmpiricalCovariance) {
  SeededRng rng(12);
  Matrix a(2, 2);
  a(0, 0) = 2.0;
  a(0, 1) = a(1, 0) = 0.6;
  a(1, 1) = 0.5;
  const CovFactor s = cholesky(a);
  const int n = 100000;
  double c00 = 0, c01 = 0, c11 = 0;
  for (int i = 0; i < n; ++i) {
    const Vector z = sample_gaussian(Vector{0.0, 0.0}, s, rng);
    c00 += z[0] * z[0];
    c01 += z[0] * z[1];
    c11 += z[1] * z[1];
  }
  EXPECT_NEAR(c00 / n, 2.0, 0.05);
  EXPECT_NEAR(c01 / n, 0.6, 0.03);
  EXPECT_NEAR(c11 / n, 0.5, 0.015);
}
