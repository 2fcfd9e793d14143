// Random search-direction distributions and the Gram matrices they induce.

#ifndef ZOKW_DIRECTIONS_HPP
#define ZOKW_DIRECTIONS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "zokw/linalg.hpp"
#include "zokw/random.hpp"

namespace zokw {

enum class DirectionKind { Gaussian, Spherical, CanonicalUniform, OrthonormalUniform, CoordinateNonUniform };

inline std::string_view to_string(DirectionKind k) {
  switch (k) {
    case DirectionKind::Gaussian: return "gaussian";
    case DirectionKind::Spherical: return "spherical";
    case DirectionKind::CanonicalUniform: return "canonical";
    case DirectionKind::OrthonormalUniform: return "orthonormal";
    case DirectionKind::CoordinateNonUniform: return "nonuniform";
  }
  return "unknown";
}

/// Random orthonormal matrix: QR of a seeded Gaussian matrix with the sign of
/// each column fixed so R has a positive diagonal (Haar distributed).
inline Matrix random_orthonormal(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix g(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) g(i, j) = standard_normal(rng);

  // modified Gram-Schmidt, applied twice for orthogonality to rounding
  Matrix q(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    Vector col = g.column(j);
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < d; ++i) proj += q(i, k) * col[i];
        for (std::size_t i = 0; i < d; ++i) col[i] -= proj * q(i, k);
      }
    const double nrm = norm2(col);
    if (nrm == 0.0) throw std::runtime_error("random_orthonormal: degenerate Gaussian draw");
    for (std::size_t i = 0; i < d; ++i) q(i, j) = col[i] / nrm;
  }
  return q;
}

/// Law of the search direction v, normalized so that E[v v^T] = I.
class DirectionDistribution {
 public:
  static DirectionDistribution gaussian(std::size_t d) { return {DirectionKind::Gaussian, d}; }
  static DirectionDistribution spherical(std::size_t d) { return {DirectionKind::Spherical, d}; }
  static DirectionDistribution canonical(std::size_t d) { return {DirectionKind::CanonicalUniform, d}; }

  static DirectionDistribution orthonormal(Matrix u) {
    if (!u.square() || u.rows() == 0) throw std::invalid_argument("orthonormal directions: U must be a non-empty square matrix");
    const std::size_t d = u.rows();
    const Matrix gram = u.transpose() * u;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)) > 1e-10)
          throw std::invalid_argument("orthonormal directions: U^T U differs from I beyond 1e-10");
    DirectionDistribution out{DirectionKind::OrthonormalUniform, d};
    out.basis_ = std::move(u);
    return out;
  }

  static DirectionDistribution nonuniform(Vector p) {
    if (p.empty()) throw std::invalid_argument("nonuniform directions: probability vector is empty");
    double total = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (!(p[k] > 0.0) || !std::isfinite(p[k])) {
        std::ostringstream msg;
        msg << "nonuniform directions: p[" << k << "] = " << p[k] << " must be positive";
        throw std::invalid_argument(msg.str());
      }
      total += p[k];
    }
    if (std::abs(total - 1.0) > 1e-12) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "nonuniform directions: probabilities sum to " << total << ", expected 1";
      throw std::invalid_argument(msg.str());
    }
    DirectionDistribution out{DirectionKind::CoordinateNonUniform, p.size()};
    out.cumulative_.resize(p.size());
    std::partial_sum(p.begin(), p.end(), out.cumulative_.begin());
    out.probabilities_ = std::move(p);
    return out;
  }

  DirectionKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  bool discrete_basis() const {
    return kind_ == DirectionKind::CanonicalUniform || kind_ == DirectionKind::OrthonormalUniform;
  }
  const Matrix& basis() const { return basis_; }
  const Vector& probabilities() const { return probabilities_; }

  /// Writes sqrt(d) times basis vector k into out.
  void basis_direction(std::size_t k, std::span<double> out) const {
    const double scale = std::sqrt(static_cast<double>(dim_));
    if (kind_ == DirectionKind::OrthonormalUniform) {
      for (std::size_t i = 0; i < dim_; ++i) out[i] = scale * basis_(i, k);
    } else {
      std::fill(out.begin(), out.end(), 0.0);
      out[k] = scale;
    }
  }

  std::size_t sample_index(Rng& rng) const {
    if (kind_ == DirectionKind::CoordinateNonUniform) {
      const double u = uniform01(rng);
      const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
      return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), dim_ - 1);
    }
    std::uniform_int_distribution<std::size_t> pick(0, dim_ - 1);
    return pick(rng);
  }

  void sample_into(Rng& rng, std::span<double> out) const {
    switch (kind_) {
      case DirectionKind::Gaussian:
        for (double& x : out) x = standard_normal(rng);
        return;
      case DirectionKind::Spherical: {
        double nrm = 0.0;
        do {
          for (double& x : out) x = standard_normal(rng);
          nrm = norm2(out);
        } while (nrm == 0.0);
        const double scale = std::sqrt(static_cast<double>(dim_)) / nrm;
        for (double& x : out) x *= scale;
        return;
      }
      case DirectionKind::CanonicalUniform:
      case DirectionKind::OrthonormalUniform:
        basis_direction(sample_index(rng), out);
        return;
      case DirectionKind::CoordinateNonUniform: {
        const std::size_t k = sample_index(rng);
        std::fill(out.begin(), out.end(), 0.0);
        out[k] = std::sqrt(1.0 / probabilities_[k]);
        return;
      }
    }
  }

 private:
  DirectionDistribution(DirectionKind kind, std::size_t d) : kind_(kind), dim_(d) {
    if (d == 0) throw std::invalid_argument("direction distribution: dimension must be positive");
  }

  DirectionKind kind_;
  std::size_t dim_;
  Matrix basis_;
  Vector probabilities_;
  Vector cumulative_;
};

enum class Replacement { With, Without };

struct QueryMode {
  std::size_t m = 1;
  Replacement replacement = Replacement::With;
};

/// Throws if the query mode cannot be used with the distribution.
inline void validate(const QueryMode& mode, const DirectionDistribution& dist) {
  if (mode.m == 0) throw std::invalid_argument("query mode: m must be at least 1");
  if (mode.replacement == Replacement::Without) {
    if (!dist.discrete_basis())
      throw std::invalid_argument("query mode: sampling without replacement requires canonical or orthonormal directions, got " +
                                  std::string(to_string(dist.kind())));
    if (mode.m > dist.dim()) {
      std::ostringstream msg;
      msg << "query mode: m = " << mode.m << " exceeds d = " << dist.dim() << " under sampling without replacement";
      throw std::invalid_argument(msg.str());
    }
  }
}

inline Vector sample(const DirectionDistribution& dist, Rng& rng) {
  Vector v(dist.dim());
  dist.sample_into(rng, v);
  return v;
}

/// m directions stored as consecutive rows of an m x d matrix.
inline Matrix sample_batch(const DirectionDistribution& dist, const QueryMode& mode, Rng& rng) {
  validate(mode, dist);
  const std::size_t d = dist.dim();
  Matrix out(mode.m, d);
  if (mode.replacement == Replacement::With) {
    for (std::size_t j = 0; j < mode.m; ++j) dist.sample_into(rng, out.row(j));
    return out;
  }
  // partial Fisher-Yates: uniform over ordered m-subsets of the basis
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t j = 0; j < mode.m; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, d - 1);
    std::swap(idx[j], idx[pick(rng)]);
    dist.basis_direction(idx[j], out.row(j));
  }
  return out;
}

/// Q = E[v v^T S v v^T] in closed form.
inline SymMatrix analytic_q(const DirectionDistribution& dist, const SymMatrix& s) {
  const std::size_t d = dist.dim();
  if (s.dim() != d) throw DimensionError("analytic_q: S dimension does not match the direction distribution");
  const double dd = static_cast<double>(d);
  switch (dist.kind()) {
    case DirectionKind::Gaussian:
    case DirectionKind::Spherical: {
      SymMatrix q = 2.0 * s;
      q += s.trace() * SymMatrix::identity(d);
      if (dist.kind() == DirectionKind::Spherical) q *= dd / (dd + 2.0);
      return q;
    }
    case DirectionKind::CanonicalUniform: {
      Vector diag = s.diag();
      for (double& x : diag) x *= dd;
      return SymMatrix::diagonal(diag);
    }
    case DirectionKind::OrthonormalUniform: {
      const Matrix& u = dist.basis();
      const Matrix rotated = u.transpose() * s.matrix() * u;
      Matrix scaled = u;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < d; ++k) scaled(i, k) *= dd * rotated(k, k);
      return SymMatrix::symmetric_part(scaled * u.transpose());
    }
    case DirectionKind::CoordinateNonUniform: {
      Vector diag = s.diag();
      for (std::size_t k = 0; k < d; ++k) diag[k] /= dist.probabilities()[k];
      return SymMatrix::diagonal(diag);
    }
  }
  throw std::logic_error("analytic_q: unhandled direction kind");
}

/// Gram matrix of the m-direction averaged estimator.
inline SymMatrix analytic_q_multi(const DirectionDistribution& dist, const SymMatrix& s, const QueryMode& mode) {
  validate(mode, dist);
  const SymMatrix q = analytic_q(dist, s);
  const double m = static_cast<double>(mode.m);
  const double d = static_cast<double>(dist.dim());
  if (mode.m == 1) return q;
  if (mode.replacement == Replacement::With) return (1.0 / m) * q + ((m - 1.0) / m) * s;
  if (mode.m == dist.dim()) return s;
  return ((d - m) / (m * (d - 1.0))) * q + (d * (m - 1.0) / (m * (d - 1.0))) * s;
}

/// Limiting covariance of the last (non-averaged) iterate scaled by n^{alpha/2}.
inline SymMatrix nonavg_covariance(const SymMatrix& q, const SymMatrix& h, double eta0) {
  if (q.dim() != h.dim()) throw DimensionError("nonavg_covariance: Q and H dimensions differ");
  const auto eig = sym_eigen(h, {.label = "Hessian"});
  if (eig.eigenvalues.back() <= 0.0) throw std::invalid_argument("nonavg_covariance: H is not positive definite");
  const std::size_t d = h.dim();
  const Matrix& p = eig.eigenvectors;
  Matrix m = p.transpose() * q.matrix() * p;
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t l = 0; l < d; ++l) m(k, l) *= eta0 / (eig.eigenvalues[k] + eig.eigenvalues[l]);
  return SymMatrix::symmetric_part(p * m * p.transpose());
}

}  // namespace zokw

#endif  // ZOKW_DIRECTIONS_HPP
