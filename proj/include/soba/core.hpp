#pragma once

// Dense value types and elementary operations shared by every module:
// unit-norm features, class text weights, inner-product logits, softmax,
// entropy and the argmax pseudo-label.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace soba {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Operand shapes disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values, invalid probabilities, bad parameters.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline std::string dimension_report(const char* what, Index expected,
                                    Index actual) {
  return std::string(what) + ": expected dimension " +
         std::to_string(expected) + ", got " + std::to_string(actual);
}

inline void require_dim(const char* what, Index expected, Index actual) {
  if (expected != actual) {
    throw DimensionError(dimension_report(what, expected, actual));
  }
}

/// How raw embeddings are brought to unit norm on ingestion.
enum class IngestMode {
  renormalize,  // any finite non-zero vector is rescaled
  strict,       // norms outside [0.99, 1.01] are rejected, then rescaled
};

namespace detail {

template <typename Derived>
void normalize_for_ingest(Eigen::MatrixBase<Derived>& v, IngestMode mode,
                          const char* what) {
  using Scalar = typename Derived::Scalar;
  if (!v.allFinite()) {
    throw DomainError(std::string(what) + ": non-finite entry");
  }
  const Scalar norm = v.norm();
  if (!(norm > Scalar(0))) {
    throw DomainError(std::string(what) + ": zero-norm vector");
  }
  if (mode == IngestMode::strict &&
      (norm < Scalar(0.99) || norm > Scalar(1.01))) {
    throw DomainError(std::string(what) + ": norm " + std::to_string(norm) +
                      " outside [0.99, 1.01] in strict mode");
  }
  v /= norm;
}

}  // namespace detail

/// A unit-norm d-dimensional image embedding.
template <typename Scalar>
class FeatureVector {
 public:
  FeatureVector() = default;

  template <typename Derived>
  static FeatureVector ingest(const Eigen::MatrixBase<Derived>& raw,
                              IngestMode mode = IngestMode::renormalize) {
    Vector<Scalar> v = raw.template cast<Scalar>();
    detail::normalize_for_ingest(v, mode, "feature");
    return FeatureVector(std::move(v));
  }

  const Vector<Scalar>& values() const noexcept { return values_; }
  Index dim() const noexcept { return values_.size(); }

 private:
  explicit FeatureVector(Vector<Scalar> v) : values_(std::move(v)) {}
  Vector<Scalar> values_;
};

/// N x d matrix of unit-norm class text embeddings (row k is class k) with
/// the class-name manifest.
template <typename Scalar>
class TextWeights {
 public:
  TextWeights() = default;

  /// Rows are normalized per `mode`. Empty `names` yields "class_<k>".
  template <typename Derived>
  static TextWeights ingest(const Eigen::MatrixBase<Derived>& rows,
                            std::vector<std::string> names = {},
                            IngestMode mode = IngestMode::renormalize) {
    Matrix<Scalar> w = rows.template cast<Scalar>();
    if (w.rows() < 2) {
      throw DomainError("text weights: need at least 2 classes, got " +
                        std::to_string(w.rows()));
    }
    if (w.cols() < 1) throw DomainError("text weights: zero dimension");
    for (Index k = 0; k < w.rows(); ++k) {
      auto row = w.row(k);
      detail::normalize_for_ingest(row, mode, "text weight row");
    }
    if (names.empty()) {
      names.reserve(static_cast<std::size_t>(w.rows()));
      for (Index k = 0; k < w.rows(); ++k) {
        names.push_back("class_" + std::to_string(k));
      }
    }
    if (static_cast<Index>(names.size()) != w.rows()) {
      throw DimensionError(dimension_report("class names", w.rows(),
                                            static_cast<Index>(names.size())));
    }
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
      if (!seen.insert(n).second) {
        throw DomainError("text weights: duplicate class name '" + n + "'");
      }
    }
    return TextWeights(std::move(w), std::move(names));
  }

  const Matrix<Scalar>& rows() const noexcept { return rows_; }
  const std::vector<std::string>& class_names() const noexcept {
    return names_;
  }
  Index num_classes() const noexcept { return rows_.rows(); }
  Index dim() const noexcept { return rows_.cols(); }

 private:
  TextWeights(Matrix<Scalar> rows, std::vector<std::string> names)
      : rows_(std::move(rows)), names_(std::move(names)) {}

  Matrix<Scalar> rows_;
  std::vector<std::string> names_;
};

struct PseudoLabel {
  Index class_index = 0;
  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

/// One stream element: a feature and its ground-truth label if known.
template <typename Scalar>
struct Sample {
  FeatureVector<Scalar> feature;
  std::optional<std::uint32_t> label;
};

/// values[k] = <f, w_k>.
template <typename Derived>
Vector<typename Derived::Scalar> inner_logits(
    const Eigen::MatrixBase<Derived>& f,
    const TextWeights<typename Derived::Scalar>& w) {
  require_dim("inner_logits feature", w.dim(), f.size());
  return w.rows() * f;
}

template <typename Scalar>
Vector<Scalar> inner_logits(const FeatureVector<Scalar>& f,
                            const TextWeights<Scalar>& w) {
  return inner_logits(f.values(), w);
}

/// Temperature-scaled softmax, stabilized by max subtraction.
template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& l,
                                         typename Derived::Scalar temperature) {
  using Scalar = typename Derived::Scalar;
  if (!(temperature > Scalar(0)) || !std::isfinite(temperature)) {
    throw DomainError("softmax: temperature must be positive and finite");
  }
  if (l.size() == 0) throw DomainError("softmax: empty logits");
  if (!l.allFinite()) throw DomainError("softmax: non-finite logits");
  Vector<Scalar> z = l / temperature;
  z.array() -= z.maxCoeff();
  z = z.array().exp();
  z /= z.sum();
  return z;
}

/// Shannon entropy in nats, with 0 ln 0 := 0.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar h = 0;
  for (Index k = 0; k < p.size(); ++k) {
    const Scalar pk = p(k);
    if (!std::isfinite(pk)) throw DomainError("entropy: non-finite entry");
    if (pk < Scalar(0)) throw DomainError("entropy: negative probability");
    if (pk > Scalar(0)) h -= pk * std::log(pk);
  }
  return h;
}

/// entropy(softmax(l, temperature)); the queue's ranking score.
template <typename Derived>
typename Derived::Scalar prediction_entropy(
    const Eigen::MatrixBase<Derived>& l, typename Derived::Scalar temperature) {
  return entropy(softmax(l, temperature));
}

/// Index of the maximum; ties go to the lowest index.
template <typename Derived>
PseudoLabel one_hot_argmax(const Eigen::MatrixBase<Derived>& l) {
  if (l.size() == 0) throw DomainError("one_hot_argmax: empty logits");
  Index best = 0;
  for (Index k = 0; k < l.size(); ++k) {
    if (std::isnan(l(k))) throw DomainError("one_hot_argmax: NaN logit");
    if (l(k) > l(best)) best = k;
  }
  return PseudoLabel{best};
}

}  // namespace soba
