#pragma once

// Orthogonal basis from the covariance decomposition C = Q diag(s) Q^T, and
// the rotation of prototypes (W_hat = W Q, with the row-side unitary fixed to
// the identity) and of single features into that basis.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "soba/core.hpp"
#include "soba/stats.hpp"

namespace soba {

class BasisFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct RotationBasis {
  Matrix<Scalar> q;                 // d x d, orthogonal columns
  Vector<Scalar> singular_values;   // descending, nonnegative
  Index rank_keep = 0;              // leading columns used for rotation

  Index dim() const noexcept { return q.rows(); }
  auto kept() const { return q.leftCols(rank_keep); }
};

/// Relative gap under which neighbouring singular values share an eigenspace
/// whose basis is canonicalized.
inline constexpr double kDegenerateGap = 1e-10;
/// Relative slack when picking the largest-magnitude entry for the sign rule.
inline constexpr double kSignTieSlack = 1e-12;

/// Lowest index whose magnitude is within kSignTieSlack of the column's
/// maximum magnitude. That entry is made nonnegative.
template <typename Derived>
Index sign_pivot(const Eigen::MatrixBase<Derived>& column) {
  using Scalar = typename Derived::Scalar;
  const Scalar peak = column.cwiseAbs().maxCoeff();
  const Scalar floor = peak * (Scalar(1) - static_cast<Scalar>(kSignTieSlack));
  for (Index i = 0; i < column.size(); ++i) {
    if (std::abs(column(i)) >= floor) return i;
  }
  return 0;
}

namespace detail {

// Replaces the columns of `v` spanning one degenerate eigenspace by the
// pivoted Gram-Schmidt orthonormalization of the projected coordinate axes:
// at each step the axis with the largest remaining projection is taken,
// lowest index first on ties.
template <typename Scalar>
void canonicalize_eigenspace(Matrix<Scalar>& v, Index first, Index count) {
  const Index d = v.rows();
  const Matrix<Scalar> span_basis = v.middleCols(first, count);
  // column i = projection of e_i onto the eigenspace
  Matrix<Scalar> residual = span_basis * span_basis.transpose();
  std::vector<bool> used(static_cast<std::size_t>(d), false);
  for (Index c = 0; c < count; ++c) {
    Index pivot = -1;
    Scalar best = Scalar(-1);
    for (Index i = 0; i < d; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      const Scalar n2 = residual.col(i).squaredNorm();
      if (n2 > best) {
        best = n2;
        pivot = i;
      }
    }
    used[static_cast<std::size_t>(pivot)] = true;
    const Vector<Scalar> u = residual.col(pivot) / std::sqrt(best);
    v.col(first + c) = u;
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> coeff =
        u.transpose() * residual;
    residual.noalias() -= u * coeff;
  }
}

}  // namespace detail

/// Applies the ordering and sign conventions to an eigen-decomposition given
/// in any order: descending values, canonical bases inside degenerate
/// eigenspaces, largest-magnitude entry of each column nonnegative.
template <typename Scalar>
void apply_basis_conventions(Matrix<Scalar>& vectors, Vector<Scalar>& values) {
  const Index d = values.size();
  std::vector<Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return values(a) > values(b);
  });
  Matrix<Scalar> sorted_vectors(vectors.rows(), d);
  Vector<Scalar> sorted_values(d);
  for (Index j = 0; j < d; ++j) {
    sorted_vectors.col(j) = vectors.col(order[static_cast<std::size_t>(j)]);
    sorted_values(j) =
        std::max(values(order[static_cast<std::size_t>(j)]), Scalar(0));
  }

  const Scalar gap =
      static_cast<Scalar>(kDegenerateGap) *
      (d > 0 ? std::max(sorted_values(0), std::numeric_limits<Scalar>::min())
             : Scalar(1));
  Index start = 0;
  while (start < d) {
    Index end = start + 1;
    while (end < d && sorted_values(end - 1) - sorted_values(end) <= gap) {
      ++end;
    }
    if (end - start > 1) {
      detail::canonicalize_eigenspace(sorted_vectors, start, end - start);
    }
    start = end;
  }

  for (Index j = 0; j < d; ++j) {
    auto col = sorted_vectors.col(j);
    if (col(sign_pivot(col)) < Scalar(0)) col = -col;
  }
  vectors = std::move(sorted_vectors);
  values = std::move(sorted_values);
}

/// Decomposes a symmetric PSD covariance. rank_keep = 0 means d.
template <typename Scalar>
RotationBasis<Scalar> construct_basis(const Matrix<Scalar>& c,
                                      Index rank_keep = 0) {
  if (c.rows() != c.cols()) {
    throw DimensionError(dimension_report("construct_basis square", c.rows(),
                                          c.cols()));
  }
  const Index d = c.rows();
  if (d == 0) throw DimensionError("construct_basis: empty matrix");
  if (rank_keep == 0) rank_keep = d;
  if (rank_keep < 1 || rank_keep > d) {
    throw DomainError("construct_basis: rank_keep " +
                      std::to_string(rank_keep) + " outside [1, " +
                      std::to_string(d) + "]");
  }
  if (!c.allFinite()) throw BasisFailure("construct_basis: non-finite input");

  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> solver(c);
  if (solver.info() != Eigen::Success) {
    throw BasisFailure("construct_basis: eigendecomposition did not converge");
  }
  RotationBasis<Scalar> b;
  b.q = solver.eigenvectors();
  b.singular_values = solver.eigenvalues();
  if (!b.q.allFinite() || !b.singular_values.allFinite()) {
    throw BasisFailure("construct_basis: non-finite decomposition");
  }
  apply_basis_conventions(b.q, b.singular_values);
  b.rank_keep = rank_keep;
  return b;
}

template <typename Scalar>
RotationBasis<Scalar> construct_basis(const CovarianceMatrix<Scalar>& c,
                                      Index rank_keep = 0) {
  return construct_basis(c.values, rank_keep);
}

/// mu_hat = mu Q restricted to the kept columns.
template <typename Derived>
Matrix<typename Derived::Scalar> rotate_prototypes(
    const Eigen::MatrixBase<Derived>& means,
    const RotationBasis<typename Derived::Scalar>& b) {
  require_dim("rotate_prototypes", b.dim(), means.cols());
  return means * b.kept();
}

template <typename Scalar>
Matrix<Scalar> rotate_prototypes(const PrototypeSet<Scalar>& p,
                                 const RotationBasis<Scalar>& b) {
  return rotate_prototypes(p.means, b);
}

/// f_hat = f^T Q restricted to the kept columns, as a column vector.
template <typename Derived>
Vector<typename Derived::Scalar> rotate_feature(
    const Eigen::MatrixBase<Derived>& f,
    const RotationBasis<typename Derived::Scalar>& b) {
  require_dim("rotate_feature", b.dim(), f.size());
  return b.kept().transpose() * f;
}

template <typename Scalar>
Vector<Scalar> rotate_feature(const FeatureVector<Scalar>& f,
                              const RotationBasis<Scalar>& b) {
  return rotate_feature(f.values(), b);
}

}  // namespace soba
