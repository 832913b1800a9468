#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cmclab {

/// Dense row-major square matrix of doubles. State counts here are tiny
/// (d <= ~20), so contiguous storage and naive loops beat anything fancier.
class Matrix {
 public:
  Matrix() = default;
  explicit Matrix(std::size_t n, double fill = 0.0) : n_(n), a_(n * n, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size())
        throw std::invalid_argument("from_rows: ragged input");
      for (std::size_t j = 0; j < rows.size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::size_t dim() const { return n_; }
  bool empty() const { return n_ == 0; }

  double& operator()(std::size_t i, std::size_t j) { return a_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }

  const std::vector<double>& data() const { return a_; }

  Matrix& operator+=(const Matrix& o) {
    assert(o.n_ == n_);
    for (std::size_t k = 0; k < a_.size(); ++k) a_[k] += o.a_[k];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    assert(o.n_ == n_);
    for (std::size_t k = 0; k < a_.size(); ++k) a_[k] -= o.a_[k];
    return *this;
  }
  Matrix& scale(double c) {
    for (double& v : a_) v *= c;
    return *this;
  }

  Matrix transpose() const {
    Matrix t(n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : a_) m = std::max(m, std::abs(v));
    return m;
  }

  /// Max absolute row sum.
  double inf_norm() const {
    double m = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n_; ++j) s += std::abs((*this)(i, j));
      m = std::max(m, s);
    }
    return m;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(Matrix a, double c) { return a.scale(c); }
inline Matrix operator*(double c, Matrix a) { return a.scale(c); }

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  assert(a.dim() == b.dim());
  const std::size_t n = a.dim();
  Matrix c(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Matrix commutator(const Matrix& a, const Matrix& b) { return a * b - b * a; }

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  assert(a.dim() == b.dim());
  double m = 0.0;
  for (std::size_t k = 0; k < a.data().size(); ++k)
    m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

inline Matrix matrix_power(const Matrix& a, std::size_t k) {
  Matrix r = Matrix::identity(a.dim());
  for (std::size_t i = 0; i < k; ++i) r = r * a;
  return r;
}

using Vector = std::vector<double>;

inline Vector mat_vec(const Matrix& m, const Vector& v) {
  assert(v.size() == m.dim());
  Vector r(m.dim(), 0.0);
  for (std::size_t i = 0; i < m.dim(); ++i)
    for (std::size_t j = 0; j < m.dim(); ++j) r[i] += m(i, j) * v[j];
  return r;
}

/// v^T M, i.e. M^T v. Row vector convention for distribution pushforwards.
inline Vector vec_mat(const Vector& v, const Matrix& m) {
  assert(v.size() == m.dim());
  Vector r(m.dim(), 0.0);
  for (std::size_t j = 0; j < m.dim(); ++j)
    for (std::size_t i = 0; i < m.dim(); ++i) r[j] += v[i] * m(i, j);
  return r;
}

/// Matrix exponential by scaling and squaring on the Taylor series.
/// Scales until the inf-norm is <= 0.5, sums until the next term falls
/// below series_tol relative to the partial sum, then squares back.
inline Matrix expm(const Matrix& a, double series_tol = 1e-14) {
  const std::size_t n = a.dim();
  int squarings = 0;
  for (double norm = a.inf_norm(); norm > 0.5; norm *= 0.5) ++squarings;
  Matrix b = a;
  b.scale(std::ldexp(1.0, -squarings));
  Matrix sum = Matrix::identity(n);
  Matrix term = Matrix::identity(n);
  for (int k = 1; k <= 64; ++k) {
    term = term * b;
    term.scale(1.0 / k);
    sum += term;
    if (term.max_abs() <= series_tol * std::max(1.0, sum.max_abs())) break;
  }
  for (int s = 0; s < squarings; ++s) sum = sum * sum;
  return sum;
}

/// Determinant by Gaussian elimination with partial pivoting.
inline double det(Matrix m) {
  const std::size_t n = m.dim();
  double d = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(m(r, c)) > std::abs(m(p, c))) p = r;
    if (m(p, c) == 0.0) return 0.0;
    if (p != c) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(p, j), m(c, j));
      d = -d;
    }
    d *= m(c, c);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = m(r, c) / m(c, c);
      for (std::size_t j = c; j < n; ++j) m(r, j) -= f * m(c, j);
    }
  }
  return d;
}

}  // namespace cmclab
