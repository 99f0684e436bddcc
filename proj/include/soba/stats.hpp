#pragma once

// Class means and the pooled within-class covariance of a queue snapshot.

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "soba/core.hpp"
#include "soba/queue.hpp"

namespace soba {

template <typename Scalar>
struct PrototypeSet {
  Matrix<Scalar> means;                // N x d, row k = class mean
  std::vector<std::size_t> support;    // samples per class
  std::vector<bool> fallback_mask;     // true where the text row was used
};

template <typename Scalar>
struct CovarianceMatrix {
  Matrix<Scalar> values;  // d x d
  Scalar regularization_eps = 0;
};

struct CovarianceOptions {
  double relative_eps = 1e-6;  // eps = max(relative_eps * trace / d, floor_eps)
  double floor_eps = 1e-12;
  bool average_over_all_classes = false;  // divide by N instead of N'
};

class InsufficientStatistics : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Empirical mean of each class's stored features. Empty classes fall back
/// to their text embedding row.
template <typename Scalar>
PrototypeSet<Scalar> class_means(const DynamicQueue<Scalar>& q,
                                 const TextWeights<Scalar>& w) {
  require_dim("class_means classes", w.num_classes(), q.num_classes());
  const Index n = w.num_classes();
  const Index d = w.dim();
  PrototypeSet<Scalar> p;
  p.means.resize(n, d);
  p.support.assign(static_cast<std::size_t>(n), 0);
  p.fallback_mask.assign(static_cast<std::size_t>(n), false);
  for (Index k = 0; k < n; ++k) {
    const auto members = q.class_members(k);
    const auto ks = static_cast<std::size_t>(k);
    p.support[ks] = members.size();
    if (members.empty()) {
      p.means.row(k) = w.rows().row(k);
      p.fallback_mask[ks] = true;
      continue;
    }
    Vector<Scalar> sum = Vector<Scalar>::Zero(d);
    for (const auto& e : members) {
      require_dim("class_means feature", d, e.feature.dim());
      sum += e.feature.values();
    }
    p.means.row(k) = (sum / static_cast<Scalar>(members.size())).transpose();
  }
  return p;
}

/// Shared covariance: the average over populated classes of each class's
/// scatter about its mean divided by its support, plus eps * I.
template <typename Scalar>
CovarianceMatrix<Scalar> pooled_covariance(const DynamicQueue<Scalar>& q,
                                           const PrototypeSet<Scalar>& p,
                                           const CovarianceOptions& opts = {}) {
  require_dim("pooled_covariance classes", p.means.rows(), q.num_classes());
  const Index d = p.means.cols();
  const std::size_t total = q.total_size();
  std::size_t populated = 0;
  for (Index k = 0; k < q.num_classes(); ++k) {
    if (!q.class_members(k).empty()) ++populated;
  }
  if (populated == 0) {
    throw InsufficientStatistics("pooled_covariance: every class is empty");
  }

  // Centered rows scaled by 1/sqrt(M_k), so X^T X sums the per-class
  // scatter matrices already divided by their support.
  RowMatrix<Scalar> centered(static_cast<Index>(total), d);
  Index row = 0;
  for (Index k = 0; k < q.num_classes(); ++k) {
    const auto members = q.class_members(k);
    if (members.empty()) continue;
    const Scalar scale =
        Scalar(1) / std::sqrt(static_cast<Scalar>(members.size()));
    for (const auto& e : members) {
      require_dim("pooled_covariance feature", d, e.feature.dim());
      centered.row(row++) =
          scale * (e.feature.values().transpose() - p.means.row(k));
    }
  }

  Matrix<Scalar> c = Matrix<Scalar>::Zero(d, d);
  c.template selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
  c.template triangularView<Eigen::StrictlyUpper>() = c.transpose();

  const Scalar classes =
      opts.average_over_all_classes ? static_cast<Scalar>(q.num_classes())
                                    : static_cast<Scalar>(populated);
  c /= classes;

  CovarianceMatrix<Scalar> out;
  out.regularization_eps =
      std::max(static_cast<Scalar>(opts.relative_eps) * c.trace() /
                   static_cast<Scalar>(d),
               static_cast<Scalar>(opts.floor_eps));
  c.diagonal().array() += out.regularization_eps;
  out.values = std::move(c);
  return out;
}

}  // namespace soba
