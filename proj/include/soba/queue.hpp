#pragma once

// Per-pseudo-class bounded store of the lowest-entropy test features.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "soba/core.hpp"

namespace soba {

template <typename Scalar>
struct QueueEntry {
  FeatureVector<Scalar> feature;
  Scalar entropy = 0;
  std::uint64_t arrival = 0;
  Vector<Scalar> logits;
};

/// Ranking key: lower entropy first, earlier arrival breaks ties.
template <typename Scalar>
bool entry_before(const QueueEntry<Scalar>& a, const QueueEntry<Scalar>& b) {
  return std::tie(a.entropy, a.arrival) < std::tie(b.entropy, b.arrival);
}

enum class QueueOutcome { appended, replaced, rejected };

class StreamOrderError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename Scalar>
class DynamicQueue {
 public:
  using Entry = QueueEntry<Scalar>;

  DynamicQueue(Index num_classes, std::size_t capacity,
               Scalar temperature = Scalar(100))
      : per_class_(static_cast<std::size_t>(num_classes)),
        capacity_(capacity),
        temperature_(temperature) {
    if (num_classes < 1) throw DomainError("queue: need at least one class");
    if (capacity < 1) throw DomainError("queue: capacity must be positive");
    if (!(temperature > Scalar(0))) {
      throw DomainError("queue: temperature must be positive");
    }
  }

  /// Scores the sample by entropy(softmax(logits, temperature)) and offers
  /// it to the collection of `label`.
  QueueOutcome update(FeatureVector<Scalar> f, PseudoLabel label,
                      Vector<Scalar> logits, std::uint64_t arrival) {
    const Scalar h = prediction_entropy(logits, temperature_);
    return insert(label,
                  Entry{std::move(f), h, arrival, std::move(logits)});
  }

  /// Offers an entry whose entropy is already computed.
  QueueOutcome insert(PseudoLabel label, Entry entry) {
    check_label(label);
    if (newest_arrival_ && entry.arrival <= *newest_arrival_) {
      throw StreamOrderError("queue: arrival index " +
                             std::to_string(entry.arrival) +
                             " does not follow stored arrival " +
                             std::to_string(*newest_arrival_));
    }
    auto& bucket = per_class_[static_cast<std::size_t>(label.class_index)];
    QueueOutcome outcome = QueueOutcome::appended;
    if (bucket.size() >= capacity_) {
      // strict: an entropy equal to the stored maximum is rejected
      if (!(entry.entropy < bucket.back().entropy)) {
        return QueueOutcome::rejected;
      }
      bucket.pop_back();
      outcome = QueueOutcome::replaced;
    }
    newest_arrival_ = entry.arrival;
    const auto pos = std::upper_bound(bucket.begin(), bucket.end(), entry,
                                      entry_before<Scalar>);
    bucket.insert(pos, std::move(entry));
    return outcome;
  }

  /// Entries of class k in ascending (entropy, arrival) order.
  std::span<const Entry> class_members(Index k) const {
    check_label(PseudoLabel{k});
    return per_class_[static_cast<std::size_t>(k)];
  }

  std::vector<std::size_t> occupancy() const {
    std::vector<std::size_t> counts;
    counts.reserve(per_class_.size());
    for (const auto& b : per_class_) counts.push_back(b.size());
    return counts;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& b : per_class_) n += b.size();
    return n;
  }

  Index num_classes() const noexcept {
    return static_cast<Index>(per_class_.size());
  }
  std::size_t capacity() const noexcept { return capacity_; }
  Scalar temperature() const noexcept { return temperature_; }
  Index dim() const {
    for (const auto& b : per_class_) {
      if (!b.empty()) return b.front().feature.dim();
    }
    return 0;
  }

 private:
  void check_label(PseudoLabel label) const {
    if (label.class_index < 0 || label.class_index >= num_classes()) {
      throw DomainError("queue: class index " +
                        std::to_string(label.class_index) +
                        " out of range [0, " + std::to_string(num_classes()) +
                        ")");
    }
  }

  std::vector<std::vector<Entry>> per_class_;
  std::size_t capacity_;
  Scalar temperature_;
  std::optional<std::uint64_t> newest_arrival_;
};

}  // namespace soba
