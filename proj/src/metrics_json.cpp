#include <string>

#include "soba/io.hpp"

namespace soba {

namespace {

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json head_counts(const HeadReport& r) {
  return {{"scored", r.scored}, {"labeled", r.labeled}, {"correct", r.correct}};
}

nlohmann::json config_json(const EngineConfig& cfg) {
  nlohmann::json refresh;
  if (cfg.schedule.mode == RefreshSchedule::Mode::fraction) {
    refresh = {{"mode", "fraction"}, {"fraction", cfg.schedule.fraction}};
  } else {
    refresh = {{"mode", "interval"}, {"interval", cfg.schedule.interval}};
  }
  return {{"head", std::string(to_string(cfg.fusion.head))},
          {"mode", std::string(to_string(cfg.fusion.mode))},
          {"alpha", cfg.fusion.alpha},
          {"normalize_prototypes", cfg.fusion.normalize_prototypes},
          {"capacity", cfg.capacity},
          {"temperature", cfg.temperature},
          {"rank", cfg.rank_keep},
          {"refresh", refresh},
          {"covariance",
           {{"relative_eps", cfg.covariance.relative_eps},
            {"floor_eps", cfg.covariance.floor_eps},
            {"average_over_all_classes",
             cfg.covariance.average_over_all_classes}}},
          {"score_all_heads", cfg.score_all_heads}};
}

}  // namespace

nlohmann::json metrics_to_json(const RunMetrics& m, const EngineConfig& cfg,
                               Index num_classes, bool include_timing) {
  nlohmann::json accuracy = {{"fused", optional_number(m.accuracy.fused.accuracy)}};
  nlohmann::json counts = nlohmann::json::object();
  for (Head h : kAllHeads) {
    const auto& r = m.accuracy.heads[head_slot(h)];
    const std::string name(to_string(h));
    accuracy[name] = optional_number(r.accuracy);
    counts[name] = head_counts(r);
  }
  counts["fused"] = head_counts(m.accuracy.fused);

  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& c : m.accuracy.confusion) {
    confusion.push_back({c.true_label, c.predicted, c.count});
  }

  nlohmann::json j = {
      {"schema_version", kMetricsSchemaVersion},
      {"config", config_json(cfg)},
      {"num_classes", num_classes},
      {"samples_seen", m.samples_seen},
      {"labeled_samples", m.labeled_samples},
      {"top1_correct", m.top1_correct},
      {"accuracy", accuracy},
      {"head_counts", counts},
      {"refresh_count", m.refresh_count},
      {"refresh_skipped", m.refresh_skipped},
      {"basis_failures", m.basis_failures},
      {"degenerate_prototype_events", m.degenerate_prototype_events},
      {"prediction_counts", m.accuracy.prediction_counts},
      {"confusion", confusion},
      {"queue_occupancy_histogram", m.occupancy_histogram},
  };
  if (m.last_singular_values) {
    const auto& s = *m.last_singular_values;
    j["singular_values"] = std::vector<double>(s.data(), s.data() + s.size());
  } else {
    j["singular_values"] = nullptr;
  }
  if (include_timing) {
    j["timing"] = {{"scoring_seconds", m.scoring_seconds},
                   {"refresh_seconds", m.refresh_seconds}};
  }
  return j;
}

nlohmann::json queue_snapshot_json(const DynamicQueue<double>& q) {
  nlohmann::json classes = nlohmann::json::object();
  for (Index k = 0; k < q.num_classes(); ++k) {
    const auto members = q.class_members(k);
    if (members.empty()) continue;
    nlohmann::json list = nlohmann::json::array();
    for (const auto& e : members) {
      list.push_back({{"entropy", e.entropy}, {"arrival_index", e.arrival}});
    }
    classes[std::to_string(k)] = std::move(list);
  }
  return classes;
}

}  // namespace soba
