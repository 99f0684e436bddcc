#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "soba/core.hpp"

namespace soba::testing {

inline Vector<double> random_gaussian(std::mt19937_64& rng, Index d) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector<double> v(d);
  for (Index i = 0; i < d; ++i) v(i) = g(rng);
  return v;
}

inline Vector<double> random_unit(std::mt19937_64& rng, Index d) {
  Vector<double> v = random_gaussian(rng, d);
  return v / v.norm();
}

inline Matrix<double> random_matrix(std::mt19937_64& rng, Index rows,
                                    Index cols) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix<double> m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = g(rng);
  }
  return m;
}

/// Haar-ish random orthogonal matrix from a QR of a Gaussian matrix.
inline Matrix<double> random_orthogonal(std::mt19937_64& rng, Index d) {
  const Matrix<double> a = random_matrix(rng, d, d);
  Eigen::HouseholderQR<Matrix<double>> qr(a);
  Matrix<double> q = qr.householderQ();
  const Vector<double> diag = qr.matrixQR().diagonal();
  for (Index j = 0; j < d; ++j) {
    if (diag(j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

/// Random PSD matrix G G^T / d with G d x (d + extra).
inline Matrix<double> random_psd(std::mt19937_64& rng, Index d,
                                 Index extra = 4) {
  const Matrix<double> g = random_matrix(rng, d, d + extra);
  return g * g.transpose() / static_cast<double>(d);
}

inline TextWeights<double> random_text(std::mt19937_64& rng, Index n,
                                       Index d) {
  return TextWeights<double>::ingest(random_matrix(rng, n, d));
}

inline FeatureVector<double> random_feature(std::mt19937_64& rng, Index d) {
  return FeatureVector<double>::ingest(random_gaussian(rng, d));
}

}  // namespace soba::testing
