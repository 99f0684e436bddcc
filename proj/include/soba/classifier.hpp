#pragma once

// Classifier heads over a prototype snapshot and the logit fusion rule.

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "soba/basis.hpp"
#include "soba/core.hpp"
#include "soba/stats.hpp"

namespace soba {

enum class Head { zeroshot, ncm, l1, l2, soba, baseline };
inline constexpr std::array<Head, 6> kAllHeads = {
    Head::zeroshot, Head::ncm, Head::l1, Head::l2, Head::soba, Head::baseline};

enum class RotationMode { prototype_only, symmetric };
enum class DistanceMetric { l1, l2 };

constexpr std::string_view to_string(Head h) {
  switch (h) {
    case Head::zeroshot: return "zeroshot";
    case Head::ncm: return "ncm";
    case Head::l1: return "l1";
    case Head::l2: return "l2";
    case Head::soba: return "soba";
    case Head::baseline: return "baseline";
  }
  return "unknown";
}

constexpr std::string_view to_string(RotationMode m) {
  return m == RotationMode::prototype_only ? "prototype_only" : "symmetric";
}

inline std::optional<Head> parse_head(std::string_view s) {
  for (Head h : kAllHeads) {
    if (to_string(h) == s) return h;
  }
  return std::nullopt;
}

inline std::optional<RotationMode> parse_rotation_mode(std::string_view s) {
  if (s == "prototype_only") return RotationMode::prototype_only;
  if (s == "symmetric") return RotationMode::symmetric;
  return std::nullopt;
}

constexpr std::size_t head_slot(Head h) { return static_cast<std::size_t>(h); }

/// Selects the prediction head and how its logits are formed.
///
/// zeroshot: text logits alone. ncm / l1 / l2: the prototype classifier
/// alone. baseline: zero-shot + alpha * NCM. soba: zero-shot + alpha * the
/// rotated-prototype logits.
struct FusionConfig {
  double alpha = 15.0;
  Head head = Head::soba;
  RotationMode mode = RotationMode::prototype_only;
  bool normalize_prototypes = false;
};

/// Cosine similarity to each prototype row. A zero-norm prototype scores -1.
template <typename DerivedF, typename DerivedM>
Vector<typename DerivedF::Scalar> ncm_logits(
    const Eigen::MatrixBase<DerivedF>& f,
    const Eigen::MatrixBase<DerivedM>& means,
    bool* degenerate = nullptr) {
  using Scalar = typename DerivedF::Scalar;
  require_dim("ncm_logits", means.cols(), f.size());
  const Scalar fn = f.norm();
  Vector<Scalar> out(means.rows());
  bool flagged = false;
  for (Index k = 0; k < means.rows(); ++k) {
    const Scalar mn = means.row(k).norm();
    if (!(mn > Scalar(0)) || !(fn > Scalar(0))) {
      out(k) = Scalar(-1);
      flagged = true;
      continue;
    }
    out(k) = means.row(k).dot(f.transpose()) / (mn * fn);
  }
  if (degenerate) *degenerate = flagged;
  return out;
}

template <typename Scalar>
Vector<Scalar> ncm_logits(const FeatureVector<Scalar>& f,
                          const PrototypeSet<Scalar>& p,
                          bool* degenerate = nullptr) {
  return ncm_logits(f.values(), p.means, degenerate);
}

/// Negated L1 or L2 distance to each prototype row, so argmax is nearest.
template <typename DerivedF, typename DerivedM>
Vector<typename DerivedF::Scalar> distance_logits(
    const Eigen::MatrixBase<DerivedF>& f,
    const Eigen::MatrixBase<DerivedM>& means, DistanceMetric metric) {
  using Scalar = typename DerivedF::Scalar;
  require_dim("distance_logits", means.cols(), f.size());
  Vector<Scalar> out(means.rows());
  for (Index k = 0; k < means.rows(); ++k) {
    const auto diff = means.row(k) - f.transpose();
    out(k) = metric == DistanceMetric::l1 ? -diff.cwiseAbs().sum()
                                          : -diff.norm();
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> distance_logits(const FeatureVector<Scalar>& f,
                               const PrototypeSet<Scalar>& p,
                               DistanceMetric metric) {
  return distance_logits(f.values(), p.means, metric);
}

/// Rows scaled to unit norm; zero rows are left as they are.
template <typename Derived>
Matrix<typename Derived::Scalar> normalized_rows(
    const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out = m;
  for (Index k = 0; k < out.rows(); ++k) {
    const Scalar n = out.row(k).norm();
    if (n > Scalar(0)) out.row(k) /= n;
  }
  return out;
}

/// Inner products with the rotated prototypes. prototype_only scores the raw
/// feature; symmetric rotates the feature into the same basis first, which at
/// full rank reproduces <f, mu_k> exactly.
template <typename DerivedF, typename DerivedM>
Vector<typename DerivedF::Scalar> soba_logits(
    const Eigen::MatrixBase<DerivedF>& f,
    const Eigen::MatrixBase<DerivedM>& rotated,
    const RotationBasis<typename DerivedF::Scalar>& b, RotationMode mode,
    bool normalize_prototypes = false) {
  using Scalar = typename DerivedF::Scalar;
  require_dim("soba_logits basis", b.dim(), f.size());
  require_dim("soba_logits prototypes", b.rank_keep, rotated.cols());
  Vector<Scalar> probe;
  if (mode == RotationMode::symmetric) {
    probe = rotate_feature(f, b);
  } else {
    // truncated prototypes act as zero-padded to d coordinates
    probe = f.head(b.rank_keep);
  }
  if (normalize_prototypes) return normalized_rows(rotated) * probe;
  return rotated * probe;
}

template <typename Scalar>
Vector<Scalar> soba_logits(const FeatureVector<Scalar>& f,
                           const Matrix<Scalar>& rotated,
                           const RotationBasis<Scalar>& b, RotationMode mode,
                           bool normalize_prototypes = false) {
  return soba_logits(f.values(), rotated, b, mode, normalize_prototypes);
}

/// zero_shot + alpha * trans. alpha = 0 returns zero_shot unchanged.
template <typename DerivedZ, typename DerivedT>
Vector<typename DerivedZ::Scalar> fuse(const Eigen::MatrixBase<DerivedZ>& zero_shot,
                                       const Eigen::MatrixBase<DerivedT>& trans,
                                       double alpha) {
  using Scalar = typename DerivedZ::Scalar;
  require_dim("fuse", zero_shot.size(), trans.size());
  if (!std::isfinite(alpha)) throw DomainError("fuse: non-finite alpha");
  if (alpha == 0.0) return zero_shot;
  return zero_shot + static_cast<Scalar>(alpha) * trans;
}

template <typename DerivedZ, typename DerivedT>
Vector<typename DerivedZ::Scalar> fuse(const Eigen::MatrixBase<DerivedZ>& zero_shot,
                                       const Eigen::MatrixBase<DerivedT>& trans,
                                       const FusionConfig& cfg) {
  return fuse(zero_shot, trans, cfg.alpha);
}

}  // namespace soba
