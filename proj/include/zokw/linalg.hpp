// Dense linear algebra for the small matrices used throughout zokw.
//
// Everything here is sized for d up to a few hundred: plain row-major storage,
// cyclic Jacobi for symmetric eigenproblems, and no external numerics library.

#ifndef ZOKW_LINALG_HPP
#define ZOKW_LINALG_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace zokw {

using Vector = std::vector<double>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EigenConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

inline Vector axpy(std::span<const double> x, double alpha, std::span<const double> y) {
  // returns x + alpha * y
  if (x.size() != y.size()) throw DimensionError("axpy: size mismatch");
  Vector out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * y[i];
  return out;
}

inline Vector subtract(std::span<const double> a, std::span<const double> b) { return axpy(a, -1.0, b); }

/// General dense matrix, row-major.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t d) {
    Matrix m(d, d);
    for (std::size_t i = 0; i < d; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      if (rows[i].size() != c) throw DimensionError("Matrix::from_rows: ragged rows");
      for (std::size_t j = 0; j < c; ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> data() const { return data_; }

  Vector column(std::size_t j) const {
    Vector c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o, "Matrix::operator+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same_shape(o, "Matrix::operator-=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  Matrix& operator*=(double c) {
    for (double& x : data_) x *= c;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double c) { return a *= c; }
  friend Matrix operator*(double c, Matrix a) { return a *= c; }

  friend Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols_ != b.rows_) throw DimensionError("Matrix product: inner dimensions differ");
    Matrix out(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
      for (std::size_t k = 0; k < a.cols_; ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < b.cols_; ++j) out(i, j) += aik * b(k, j);
      }
    return out;
  }

  friend Vector operator*(const Matrix& a, std::span<const double> x) {
    if (a.cols_ != x.size()) throw DimensionError("Matrix-vector product: size mismatch");
    Vector y(a.rows_, 0.0);
    for (std::size_t i = 0; i < a.rows_; ++i) y[i] = dot(a.row(i), x);
    return y;
  }

  double frobenius_norm() const { return norm2(data_); }

  double max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
  }

 private:
  void require_same_shape(const Matrix& o, const char* where) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionError(std::string(where) + ": shape mismatch");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Square matrix whose storage is exactly symmetric.
///
/// Construction from a general matrix symmetrizes via (M + M^T)/2 and rejects
/// inputs whose asymmetry exceeds 1e-9 relative to their largest entry. All
/// mutating members update both triangles so symmetry is never lost.
class SymMatrix {
 public:
  static constexpr double kAsymmetryTolerance = 1e-9;

  SymMatrix() = default;
  explicit SymMatrix(std::size_t d) : m_(d, d) {}
  explicit SymMatrix(const Matrix& m) : m_(symmetrized(m)) {}

  static SymMatrix identity(std::size_t d) { return SymMatrix(Matrix::identity(d)); }

  static SymMatrix diagonal(std::span<const double> diag) {
    SymMatrix s(diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) s.m_(i, i) = diag[i];
    return s;
  }

  static SymMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    return SymMatrix(Matrix::from_rows(rows));
  }

  /// Symmetrizes without the asymmetry check; for accumulators of
  /// non-symmetric contributions such as finite-difference Hessians.
  static SymMatrix symmetric_part(const Matrix& m) {
    if (!m.square()) throw DimensionError("SymMatrix::symmetric_part: matrix is not square");
    SymMatrix s(m.rows());
    s.add_symmetric_part(m, 1.0);
    return s;
  }

  std::size_t dim() const { return m_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  const Matrix& matrix() const { return m_; }

  void set(std::size_t i, std::size_t j, double value) {
    m_(i, j) = value;
    m_(j, i) = value;
  }

  /// this += w * x x^T
  void add_outer(std::span<const double> x, double w = 1.0) {
    if (x.size() != dim()) throw DimensionError("SymMatrix::add_outer: size mismatch");
    const std::size_t d = dim();
    for (std::size_t i = 0; i < d; ++i) {
      const double wi = w * x[i];
      for (std::size_t j = i; j < d; ++j) {
        const double v = wi * x[j];
        m_(i, j) += v;
        if (j != i) m_(j, i) += v;
      }
    }
  }

  /// this += w * (M + M^T)/2
  void add_symmetric_part(const Matrix& m, double w = 1.0) {
    if (m.rows() != dim() || m.cols() != dim()) throw DimensionError("SymMatrix::add_symmetric_part: shape mismatch");
    const std::size_t d = dim();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) {
        const double v = w * 0.5 * (m(i, j) + m(j, i));
        m_(i, j) += v;
        if (j != i) m_(j, i) += v;
      }
  }

  SymMatrix& operator+=(const SymMatrix& o) {
    m_ += o.m_;
    return *this;
  }
  SymMatrix& operator-=(const SymMatrix& o) {
    m_ -= o.m_;
    return *this;
  }
  SymMatrix& operator*=(double c) {
    m_ *= c;
    return *this;
  }
  friend SymMatrix operator+(SymMatrix a, const SymMatrix& b) { return a += b; }
  friend SymMatrix operator-(SymMatrix a, const SymMatrix& b) { return a -= b; }
  friend SymMatrix operator*(SymMatrix a, double c) { return a *= c; }
  friend SymMatrix operator*(double c, SymMatrix a) { return a *= c; }
  friend Vector operator*(const SymMatrix& a, std::span<const double> x) { return a.m_ * x; }

  double trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) t += m_(i, i);
    return t;
  }

  Vector diag() const {
    Vector d(dim());
    for (std::size_t i = 0; i < dim(); ++i) d[i] = m_(i, i);
    return d;
  }

  /// x^T M x
  double quadratic_form(std::span<const double> x) const { return dot(x, m_ * x); }

  double max_abs() const { return m_.max_abs(); }
  bool finite() const { return all_finite(m_.data()); }

 private:
  static Matrix symmetrized(const Matrix& m) {
    if (!m.square()) throw DimensionError("SymMatrix: matrix is not square");
    const double scale = std::max(1.0, m.max_abs());
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) {
        if (std::abs(m(i, j) - m(j, i)) > kAsymmetryTolerance * scale) {
          std::ostringstream msg;
          msg << "SymMatrix: input is not symmetric at (" << i << "," << j << "): " << m(i, j) << " vs " << m(j, i);
          throw std::invalid_argument(msg.str());
        }
        out(i, j) = 0.5 * (m(i, j) + m(j, i));
      }
    return out;
  }

  Matrix m_;
};

struct EigenDecomposition {
  Matrix eigenvectors;  // columns are eigenvectors
  Vector eigenvalues;   // sorted descending

  /// U diag(f(lambda)) U^T
  template <class F>
  SymMatrix reconstruct(F&& transform) const {
    const std::size_t d = eigenvalues.size();
    Matrix out(d, d);
    for (std::size_t k = 0; k < d; ++k) {
      const double lam = transform(eigenvalues[k]);
      if (lam == 0.0) continue;
      for (std::size_t i = 0; i < d; ++i) {
        const double uik = lam * eigenvectors(i, k);
        for (std::size_t j = 0; j < d; ++j) out(i, j) += uik * eigenvectors(j, k);
      }
    }
    return SymMatrix::symmetric_part(out);
  }

  SymMatrix reconstruct() const {
    return reconstruct([](double x) { return x; });
  }
};

struct JacobiOptions {
  double relative_tolerance = 1e-12;
  int max_sweeps = 100;
  std::string label = "matrix";
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Iterates full sweeps of plane rotations until the off-diagonal Frobenius
/// mass falls below relative_tolerance * ||M||_F. Eigenvalues come back sorted
/// descending with matching eigenvector columns.
inline EigenDecomposition sym_eigen(const SymMatrix& m, const JacobiOptions& opt = {}) {
  const std::size_t d = m.dim();
  if (!m.finite()) throw std::invalid_argument("sym_eigen: " + opt.label + " has non-finite entries");
  Matrix a = m.matrix();
  Matrix v = Matrix::identity(d);
  const double target = opt.relative_tolerance * a.frobenius_norm();

  auto off_diagonal = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  int sweep = 0;
  for (double off = off_diagonal(); off > target; off = off_diagonal()) {
    if (sweep == opt.max_sweeps) {
      std::ostringstream msg;
      msg << "sym_eigen: Jacobi iteration on " << opt.label << " (" << d << "x" << d
          << ") did not converge after " << sweep << " sweeps; off-diagonal mass " << off;
      throw EigenConvergenceError(msg.str());
    }
    ++sweep;
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigenDecomposition out{Matrix(d, d), Vector(d)};
  for (std::size_t k = 0; k < d; ++k) {
    out.eigenvalues[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < d; ++i) out.eigenvectors(i, k) = v(i, order[k]);
  }
  return out;
}

/// A * B * A, symmetrized.
inline SymMatrix sandwich(const SymMatrix& a, const SymMatrix& b) {
  if (a.dim() != b.dim()) throw DimensionError("sandwich: dimension mismatch");
  return SymMatrix::symmetric_part(a.matrix() * b.matrix() * a.matrix());
}

inline double spectral_norm(const SymMatrix& m) {
  if (m.dim() == 0) return 0.0;
  const auto eig = sym_eigen(m, {.label = "spectral_norm input"});
  return std::max(std::abs(eig.eigenvalues.front()), std::abs(eig.eigenvalues.back()));
}

inline double min_eigenvalue(const SymMatrix& m) { return sym_eigen(m).eigenvalues.back(); }

/// Inverse of a symmetric positive definite matrix via its eigendecomposition.
inline SymMatrix inverse_spd(const SymMatrix& m) {
  const auto eig = sym_eigen(m, {.label = "inverse_spd input"});
  if (eig.eigenvalues.back() <= 0.0) {
    std::ostringstream msg;
    msg << "inverse_spd: matrix is not positive definite (min eigenvalue " << eig.eigenvalues.back() << ")";
    throw std::invalid_argument(msg.str());
  }
  return eig.reconstruct([](double x) { return 1.0 / x; });
}

/// Lower-triangular Cholesky factor L with M = L L^T.
inline Matrix cholesky(const SymMatrix& m) {
  const std::size_t d = m.dim();
  Matrix l(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    double diag = m(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) throw std::invalid_argument("cholesky: matrix is not positive definite");
    l(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

}  // namespace zokw

#endif  // ZOKW_LINALG_HPP
