#pragma once

// The streaming test loop: zero-shot scoring, pseudo-labelling, queue
// update, checkpointed prototype/basis refresh and fused prediction.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "soba/basis.hpp"
#include "soba/classifier.hpp"
#include "soba/core.hpp"
#include "soba/queue.hpp"
#include "soba/stats.hpp"

namespace soba {

struct RefreshSchedule {
  enum class Mode { fraction, interval };

  Mode mode = Mode::fraction;
  double fraction = 0.1;
  std::size_t interval = 1000;
  std::optional<std::size_t> total_hint;

  static RefreshSchedule every_fraction(double fraction, std::size_t total) {
    return {Mode::fraction, fraction, 1000, total};
  }
  static RefreshSchedule every(std::size_t interval) {
    return {Mode::interval, 0.1, interval, std::nullopt};
  }

  /// Throws DomainError on an unusable schedule.
  void validate() const;

  /// True when a refresh follows the `processed`-th sample (1-based).
  /// Fraction mode fires after ceil(j * fraction * T) for j = 1, 2, ...
  bool is_checkpoint(std::size_t processed) const;

  /// First checkpoint strictly after `processed`, if any within the stream.
  std::optional<std::size_t> next_checkpoint(std::size_t processed,
                                             std::size_t total) const;
};

struct EngineConfig {
  FusionConfig fusion;
  RefreshSchedule schedule;
  std::size_t capacity = 16;
  double temperature = 100.0;
  Index rank_keep = 0;  // 0 = full rank
  CovarianceOptions covariance;
  bool score_all_heads = true;
  std::size_t block_size = 256;
};

/// Everything computed at one checkpoint from one queue snapshot.
struct RefreshResult {
  PrototypeSet<double> prototypes;
  CovarianceMatrix<double> covariance;
  RotationBasis<double> basis;
  Matrix<double> rotated;
};

/// Composes class_means, pooled_covariance, construct_basis and
/// rotate_prototypes. Throws InsufficientStatistics or BasisFailure.
RefreshResult refresh(const DynamicQueue<double>& q,
                      const TextWeights<double>& w, const EngineConfig& cfg);

inline constexpr Index kNoPrediction = -1;

struct SamplePrediction {
  std::size_t index = 0;
  std::optional<std::uint32_t> true_label;
  Index zeroshot_pred = 0;
  Index fused_pred = 0;
  double entropy = 0;
  std::array<Index, kAllHeads.size()> head_preds{};  // kNoPrediction if unscored
};

struct HeadReport {
  std::size_t scored = 0;
  std::size_t labeled = 0;
  std::size_t correct = 0;
  std::optional<double> accuracy;  // absent without labels
};

struct ConfusionCell {
  std::uint32_t true_label;
  Index predicted;
  std::size_t count;
};

struct AccuracyReport {
  std::array<HeadReport, kAllHeads.size()> heads{};
  HeadReport fused;
  std::vector<std::size_t> prediction_counts;  // fused head, per class
  std::vector<ConfusionCell> confusion;        // fused head, nonzero cells
};

/// Top-1 accuracy of one prediction column against optional labels.
/// Throws DimensionError when the lengths differ.
HeadReport evaluate(std::span<const Index> predictions,
                    std::span<const std::optional<std::uint32_t>> labels);

/// Per-head accuracy plus prediction and confusion counts of the fused head.
AccuracyReport evaluate(std::span<const SamplePrediction> predictions,
                        Index num_classes);

struct RunMetrics {
  std::size_t samples_seen = 0;
  std::size_t labeled_samples = 0;
  std::size_t top1_correct = 0;  // fused head
  AccuracyReport accuracy;
  std::size_t refresh_count = 0;
  std::size_t refresh_skipped = 0;
  std::size_t basis_failures = 0;
  std::size_t degenerate_prototype_events = 0;
  double scoring_seconds = 0;
  double refresh_seconds = 0;
  std::vector<std::size_t> occupancy_histogram;  // [m] = classes holding m
  std::optional<Vector<double>> last_singular_values;
};

struct RunResult {
  RunMetrics metrics;
  std::vector<SamplePrediction> predictions;
  DynamicQueue<double> final_queue;
};

/// Processes the stream in order. Fraction schedules without a total_hint
/// take the stream length. Throws DimensionError naming the sample index on
/// a feature of the wrong dimension.
RunResult run_stream(std::span<const Sample<double>> stream,
                     const TextWeights<double>& w, const EngineConfig& cfg);

}  // namespace soba
