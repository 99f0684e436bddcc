#include "soba/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <string>
#include <utility>

namespace soba {

namespace {

// Binary rounding of j * fraction * T can land just above an integer.
constexpr double kCheckpointSlack = 1e-9;

std::size_t fraction_checkpoint(std::size_t j, double fraction,
                                 std::size_t total) {
  const double x =
      static_cast<double>(j) * fraction * static_cast<double>(total);
  return static_cast<std::size_t>(std::ceil(x - kCheckpointSlack * x));
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Scoring state derived from one refresh, reused until the next one.
struct Snapshot {
  RefreshResult result;
  RowMatrix<double> means;        // row-major copy for the L1 loop
  Matrix<double> soba_weights;    // rotated rows, optionally normalized
  Vector<double> proto_norms;
  Vector<double> proto_sqnorms;
  bool degenerate = false;

  explicit Snapshot(RefreshResult r, bool normalize) : result(std::move(r)) {
    means = result.prototypes.means;
    soba_weights =
        normalize ? normalized_rows(result.rotated) : result.rotated;
    proto_sqnorms = means.rowwise().squaredNorm();
    proto_norms = proto_sqnorms.cwiseSqrt();
    degenerate = (proto_norms.array() <= 0.0).any();
  }
};

template <typename Row>
Index row_argmax(const Row& row) {
  Index best = 0;
  for (Index k = 1; k < row.size(); ++k) {
    if (row(k) > row(best)) best = k;
  }
  return best;
}

}  // namespace

void RefreshSchedule::validate() const {
  if (mode == Mode::fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
      throw DomainError("refresh schedule: fraction must lie in (0, 1]");
    }
    if (!total_hint) {
      throw DomainError("refresh schedule: fraction mode needs a total_hint");
    }
  } else if (interval == 0) {
    throw DomainError("refresh schedule: interval must be positive");
  }
}

std::optional<std::size_t> RefreshSchedule::next_checkpoint(
    std::size_t processed, std::size_t total) const {
  std::size_t next = 0;
  if (mode == Mode::interval) {
    next = (processed / interval + 1) * interval;
  } else {
    const std::size_t t = total_hint.value_or(total);
    if (t == 0) return std::nullopt;
    const double step = fraction * static_cast<double>(t);
    std::size_t j = std::max<std::size_t>(
        1, static_cast<std::size_t>(static_cast<double>(processed) / step));
    while (j > 1 && fraction_checkpoint(j - 1, fraction, t) > processed) --j;
    while (fraction_checkpoint(j, fraction, t) <= processed) ++j;
    next = fraction_checkpoint(j, fraction, t);
    if (next > t) return std::nullopt;
  }
  if (next > total) return std::nullopt;
  return next;
}

bool RefreshSchedule::is_checkpoint(std::size_t processed) const {
  if (processed == 0) return false;
  if (mode == Mode::interval) return processed % interval == 0;
  const auto next = next_checkpoint(processed - 1, total_hint.value_or(0));
  return next && *next == processed;
}

RefreshResult refresh(const DynamicQueue<double>& q,
                      const TextWeights<double>& w, const EngineConfig& cfg) {
  RefreshResult r;
  r.prototypes = class_means(q, w);
  r.covariance = pooled_covariance(q, r.prototypes, cfg.covariance);
  r.basis = construct_basis(r.covariance, cfg.rank_keep);
  r.rotated = rotate_prototypes(r.prototypes, r.basis);
  return r;
}

HeadReport evaluate(std::span<const Index> predictions,
                    std::span<const std::optional<std::uint32_t>> labels) {
  if (predictions.size() != labels.size()) {
    throw DimensionError(dimension_report(
        "evaluate labels", static_cast<Index>(predictions.size()),
        static_cast<Index>(labels.size())));
  }
  HeadReport r;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == kNoPrediction) continue;
    ++r.scored;
    if (!labels[i]) continue;
    ++r.labeled;
    if (static_cast<Index>(*labels[i]) == predictions[i]) ++r.correct;
  }
  if (r.labeled > 0) {
    r.accuracy =
        static_cast<double>(r.correct) / static_cast<double>(r.labeled);
  }
  return r;
}

AccuracyReport evaluate(std::span<const SamplePrediction> predictions,
                        Index num_classes) {
  AccuracyReport report;
  std::vector<std::optional<std::uint32_t>> labels;
  labels.reserve(predictions.size());
  for (const auto& p : predictions) labels.push_back(p.true_label);

  std::vector<Index> column(predictions.size());
  for (Head h : kAllHeads) {
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      column[i] = predictions[i].head_preds[head_slot(h)];
    }
    report.heads[head_slot(h)] = evaluate(column, labels);
  }
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    column[i] = predictions[i].fused_pred;
  }
  report.fused = evaluate(column, labels);

  report.prediction_counts.assign(static_cast<std::size_t>(num_classes), 0);
  std::map<std::pair<std::uint32_t, Index>, std::size_t> cells;
  for (const auto& p : predictions) {
    if (p.fused_pred >= 0 && p.fused_pred < num_classes) {
      ++report.prediction_counts[static_cast<std::size_t>(p.fused_pred)];
    }
    if (p.true_label) ++cells[{*p.true_label, p.fused_pred}];
  }
  report.confusion.reserve(cells.size());
  for (const auto& [key, count] : cells) {
    report.confusion.push_back({key.first, key.second, count});
  }
  return report;
}

RunResult run_stream(std::span<const Sample<double>> stream,
                     const TextWeights<double>& w, const EngineConfig& cfg) {
  RefreshSchedule schedule = cfg.schedule;
  if (schedule.mode == RefreshSchedule::Mode::fraction &&
      !schedule.total_hint) {
    schedule.total_hint = stream.size();
  }
  schedule.validate();
  if (!std::isfinite(cfg.fusion.alpha) || cfg.fusion.alpha < 0.0) {
    throw DomainError("engine: alpha must be finite and nonnegative");
  }
  if (cfg.rank_keep < 0 || cfg.rank_keep > w.dim()) {
    throw DomainError("engine: rank " + std::to_string(cfg.rank_keep) +
                      " outside [0, " + std::to_string(w.dim()) + "]");
  }

  const Index n = w.num_classes();
  const Index d = w.dim();
  const Head selected = cfg.fusion.head;
  const bool want_ncm = cfg.score_all_heads || selected == Head::ncm ||
                        selected == Head::baseline || selected == Head::l2;
  const bool want_l1 = cfg.score_all_heads || selected == Head::l1;
  const bool want_soba = cfg.score_all_heads || selected == Head::soba;

  RunResult out{RunMetrics{}, {},
                DynamicQueue<double>(n, cfg.capacity, cfg.temperature)};
  DynamicQueue<double>& queue = out.final_queue;
  RunMetrics& metrics = out.metrics;
  out.predictions.reserve(stream.size());

  std::optional<Snapshot> snap;
  const std::size_t block_cap = std::max<std::size_t>(1, cfg.block_size);
  const Matrix<double> text_t = w.rows().transpose();

  RowMatrix<double> x;
  RowMatrix<double> zs, proto_dot, soba_t;
  std::size_t processed = 0;
  while (processed < stream.size()) {
    std::size_t block_end = std::min(stream.size(), processed + block_cap);
    if (const auto cp = schedule.next_checkpoint(processed, stream.size())) {
      block_end = std::min(block_end, *cp);
    }
    const auto b = static_cast<Index>(block_end - processed);

    const auto score_start = Clock::now();
    x.resize(b, d);
    for (Index i = 0; i < b; ++i) {
      const auto& f = stream[processed + static_cast<std::size_t>(i)].feature;
      if (f.dim() != d) {
        throw DimensionError(
            "sample " + std::to_string(processed + static_cast<std::size_t>(i)) +
            ": " + dimension_report("feature", d, f.dim()));
      }
      x.row(i) = f.values().transpose();
    }
    zs.noalias() = x * text_t;
    if (snap) {
      if (want_ncm) proto_dot.noalias() = x * snap->means.transpose();
      if (want_soba) {
        const Index r = snap->result.basis.rank_keep;
        if (cfg.fusion.mode == RotationMode::symmetric) {
          soba_t.noalias() =
              (x * snap->result.basis.kept()) * snap->soba_weights.transpose();
        } else {
          soba_t.noalias() = x.leftCols(r) * snap->soba_weights.transpose();
        }
      }
    }

    Vector<double> logits(n), trans(n);
    for (Index i = 0; i < b; ++i) {
      const std::size_t idx = processed + static_cast<std::size_t>(i);
      const Sample<double>& s = stream[idx];
      logits = zs.row(i).transpose();
      const PseudoLabel label = one_hot_argmax(logits);
      const double h = prediction_entropy(logits, cfg.temperature);
      queue.insert(label, QueueEntry<double>{s.feature, h,
                                             static_cast<std::uint64_t>(idx),
                                             logits});

      SamplePrediction p;
      p.index = idx;
      p.true_label = s.label;
      p.entropy = h;
      p.zeroshot_pred = label.class_index;
      p.head_preds.fill(kNoPrediction);
      p.head_preds[head_slot(Head::zeroshot)] = label.class_index;

      if (!snap) {
        // warm-up: every head degenerates to zero-shot
        for (Head hd : kAllHeads) {
          if (cfg.score_all_heads || hd == selected) {
            p.head_preds[head_slot(hd)] = label.class_index;
          }
        }
      } else {
        const double fnorm2 = x.row(i).squaredNorm();
        const double fnorm = std::sqrt(fnorm2);
        if (want_ncm) {
          for (Index k = 0; k < n; ++k) {
            const double mn = snap->proto_norms(k);
            trans(k) = (mn > 0.0 && fnorm > 0.0)
                           ? proto_dot(i, k) / (mn * fnorm)
                           : -1.0;
          }
          if (snap->degenerate) ++metrics.degenerate_prototype_events;
          if (cfg.score_all_heads || selected == Head::ncm) {
            p.head_preds[head_slot(Head::ncm)] = row_argmax(trans);
          }
          if (cfg.score_all_heads || selected == Head::baseline) {
            p.head_preds[head_slot(Head::baseline)] =
                row_argmax(fuse(logits, trans, cfg.fusion.alpha));
          }
          if (cfg.score_all_heads || selected == Head::l2) {
            for (Index k = 0; k < n; ++k) {
              const double d2 = fnorm2 + snap->proto_sqnorms(k) -
                                2.0 * proto_dot(i, k);
              trans(k) = -std::sqrt(std::max(0.0, d2));
            }
            p.head_preds[head_slot(Head::l2)] = row_argmax(trans);
          }
        }
        if (want_l1) {
          for (Index k = 0; k < n; ++k) {
            trans(k) = -(snap->means.row(k) - x.row(i)).cwiseAbs().sum();
          }
          p.head_preds[head_slot(Head::l1)] = row_argmax(trans);
        }
        if (want_soba) {
          trans = soba_t.row(i).transpose();
          p.head_preds[head_slot(Head::soba)] =
              row_argmax(fuse(logits, trans, cfg.fusion.alpha));
        }
      }
      p.fused_pred = p.head_preds[head_slot(selected)];
      out.predictions.push_back(p);
    }
    processed = block_end;
    metrics.scoring_seconds += seconds_since(score_start);

    if (schedule.is_checkpoint(processed)) {
      const auto refresh_start = Clock::now();
      try {
        snap.emplace(refresh(queue, w, cfg), cfg.fusion.normalize_prototypes);
        ++metrics.refresh_count;
        metrics.last_singular_values = snap->result.basis.singular_values;
      } catch (const InsufficientStatistics&) {
        ++metrics.refresh_skipped;
      } catch (const BasisFailure&) {
        ++metrics.basis_failures;
        if (snap) {
          // keep the last valid basis, refresh the means
          RefreshResult r;
          r.prototypes = class_means(queue, w);
          r.covariance = pooled_covariance(queue, r.prototypes, cfg.covariance);
          r.basis = snap->result.basis;
          r.rotated = rotate_prototypes(r.prototypes, r.basis);
          snap.emplace(std::move(r), cfg.fusion.normalize_prototypes);
          ++metrics.refresh_count;
        } else {
          ++metrics.refresh_skipped;
        }
      }
      metrics.refresh_seconds += seconds_since(refresh_start);
    }
  }

  metrics.samples_seen = out.predictions.size();
  metrics.accuracy = evaluate(out.predictions, n);
  metrics.labeled_samples = metrics.accuracy.fused.labeled;
  metrics.top1_correct = metrics.accuracy.fused.correct;
  metrics.occupancy_histogram.assign(cfg.capacity + 1, 0);
  for (std::size_t c : queue.occupancy()) ++metrics.occupancy_histogram[c];
  return out;
}

}  // namespace soba
