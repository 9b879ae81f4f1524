#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "avb/errors.hpp"
#include "avb/rng.hpp"

namespace avb {

using Vector = std::vector<double>;

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw shape_error(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                      std::to_string(b) + ")");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw shape_error("Matrix: rows*cols != data length");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require_same_size(a.cols(), b.rows(), "matmul");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
  require_same_size(a.cols(), x.size(), "matvec");
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

// Covariance Σ held through its lower Cholesky factor L (Σ = L Lᵀ) or, for
// the diagonal kind, through the vector of variances.
class CovFactor {
 public:
  enum class Kind { full, diagonal };

  CovFactor() = default;

  static CovFactor from_cholesky(Matrix lower) {
    if (lower.rows() != lower.cols()) throw shape_error("CovFactor: factor must be square");
    for (std::size_t i = 0; i < lower.rows(); ++i) {
      if (!(lower(i, i) > 0.0) || !std::isfinite(lower(i, i)))
        throw domain_error("CovFactor: non-positive Cholesky diagonal at " + std::to_string(i));
      for (std::size_t j = i + 1; j < lower.cols(); ++j)
        if (lower(i, j) != 0.0) throw domain_error("CovFactor: factor is not lower-triangular");
    }
    CovFactor c;
    c.kind_ = Kind::full;
    c.lower_ = std::move(lower);
    return c;
  }

  static CovFactor diagonal(Vector variances) {
    for (std::size_t i = 0; i < variances.size(); ++i)
      if (!(variances[i] > 0.0) || !std::isfinite(variances[i]))
        throw domain_error("CovFactor: non-positive variance at " + std::to_string(i));
    CovFactor c;
    c.kind_ = Kind::diagonal;
    c.variances_ = std::move(variances);
    return c;
  }

  static CovFactor identity(std::size_t n) { return diagonal(Vector(n, 1.0)); }

  Kind kind() const { return kind_; }
  std::size_t dim() const { return kind_ == Kind::full ? lower_.rows() : variances_.size(); }

  const Matrix& cholesky_factor() const { return lower_; }
  const Vector& variances() const { return variances_; }

  double logdet() const {
    double s = 0.0;
    if (kind_ == Kind::full) {
      for (std::size_t i = 0; i < lower_.rows(); ++i) s += 2.0 * std::log(lower_(i, i));
    } else {
      for (double d : variances_) s += std::log(d);
    }
    return s;
  }

  double trace() const {
    if (kind_ == Kind::diagonal) {
      double s = 0.0;
      for (double d : variances_) s += d;
      return s;
    }
    return squared_norm(lower_.data());
  }

  // xᵀ Σ x = ‖Lᵀx‖².
  double quad_form(std::span<const double> x) const {
    require_same_size(x.size(), dim(), "quad_form");
    if (kind_ == Kind::diagonal) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += variances_[i] * x[i] * x[i];
      return s;
    }
    return squared_norm(mul_lower_transpose(x));
  }

  Vector mul_lower(std::span<const double> x) const {
    require_same_size(x.size(), dim(), "mul_lower");
    const std::size_t n = dim();
    Vector y(n, 0.0);
    if (kind_ == Kind::diagonal) {
      for (std::size_t i = 0; i < n; ++i) y[i] = std::sqrt(variances_[i]) * x[i];
      return y;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) y[i] += lower_(i, j) * x[j];
    return y;
  }

  Vector mul_lower_transpose(std::span<const double> x) const {
    require_same_size(x.size(), dim(), "mul_lower_transpose");
    const std::size_t n = dim();
    Vector y(n, 0.0);
    if (kind_ == Kind::diagonal) {
      for (std::size_t i = 0; i < n; ++i) y[i] = std::sqrt(variances_[i]) * x[i];
      return y;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) y[i] += lower_(j, i) * x[j];
    return y;
  }

  // L⁻¹ x by forward substitution.
  Vector solve_lower(std::span<const double> x) const {
    require_same_size(x.size(), dim(), "solve_lower");
    const std::size_t n = dim();
    Vector y(x.begin(), x.end());
    if (kind_ == Kind::diagonal) {
      for (std::size_t i = 0; i < n; ++i) y[i] /= std::sqrt(variances_[i]);
      return y;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double s = y[i];
      for (std::size_t j = 0; j < i; ++j) s -= lower_(i, j) * y[j];
      y[i] = s / lower_(i, i);
    }
    return y;
  }

  // L⁻ᵀ x by back substitution.
  Vector solve_lower_transpose(std::span<const double> x) const {
    require_same_size(x.size(), dim(), "solve_lower_transpose");
    const std::size_t n = dim();
    Vector y(x.begin(), x.end());
    if (kind_ == Kind::diagonal) {
      for (std::size_t i = 0; i < n; ++i) y[i] /= std::sqrt(variances_[i]);
      return y;
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t j = ii + 1; j < n; ++j) s -= lower_(j, ii) * y[j];
      y[ii] = s / lower_(ii, ii);
    }
    return y;
  }

  // Σ⁻¹ x.
  Vector solve(std::span<const double> x) const { return solve_lower_transpose(solve_lower(x)); }

  Matrix lower() const {
    if (kind_ == Kind::full) return lower_;
    Matrix l(dim(), dim());
    for (std::size_t i = 0; i < dim(); ++i) l(i, i) = std::sqrt(variances_[i]);
    return l;
  }

  Matrix dense() const {
    const std::size_t n = dim();
    Matrix s(n, n);
    if (kind_ == Kind::diagonal) {
      for (std::size_t i = 0; i < n; ++i) s(i, i) = variances_[i];
      return s;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double v = 0.0;
        for (std::size_t k = 0; k <= j; ++k) v += lower_(i, k) * lower_(j, k);
        s(i, j) = v;
        s(j, i) = v;
      }
    return s;
  }

  Matrix inverse() const {
    const std::size_t n = dim();
    Matrix inv(n, n);
    Vector e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      e.assign(n, 0.0);
      e[j] = 1.0;
      const Vector col = solve(e);
      for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    return inv;
  }

 private:
  Kind kind_ = Kind::diagonal;
  Matrix lower_;
  Vector variances_;
};

// Lower Cholesky factor of a symmetric matrix. Only the lower triangle is read.
inline CovFactor cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw shape_error("cholesky: matrix must be square");
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d))
      throw decomposition_error(j, "cholesky: matrix not positive definite at pivot " +
                                       std::to_string(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return CovFactor::from_cholesky(std::move(l));
}

inline double quad_form(std::span<const double> x, const CovFactor& s) { return s.quad_form(x); }

// μ + L ε with ε ~ N(0, I).
inline Vector sample_gaussian(std::span<const double> mu, const CovFactor& s, SeededRng& rng) {
  require_same_size(mu.size(), s.dim(), "sample_gaussian");
  Vector eps(mu.size());
  for (double& e : eps) e = rng.normal();
  Vector out = s.mul_lower(eps);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += mu[i];
  return out;
}

}  // namespace avb
