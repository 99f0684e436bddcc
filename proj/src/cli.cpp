#include "soba/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "soba/engine.hpp"
#include "soba/io.hpp"
#include "soba/synth.hpp"

namespace soba {

namespace {

struct EngineFlags {
  std::string features;
  double alpha = 15.0;
  std::size_t capacity = 16;
  double refresh_fraction = 0.1;
  std::size_t refresh_interval = 0;
  std::string head = "soba";
  std::string mode = "prototype_only";
  Index rank = 0;
  double temperature = 100.0;
  std::uint64_t seed = 0;
  bool normalize_prototypes = false;
  bool strict = false;
  bool all_class_average = false;
  bool primary_head_only = false;
  std::string metrics_out;
};

void add_engine_flags(CLI::App* sub, EngineFlags& f, bool sweep) {
  sub->add_option("--features", f.features, "Feature stream file")
      ->required()
      ->check(CLI::ExistingFile);
  if (!sweep) {
    sub->add_option("--alpha", f.alpha, "Fusion weight")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--capacity", f.capacity, "Queue capacity per class")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
  }
  auto* frac = sub->add_option("--refresh-fraction", f.refresh_fraction,
                               "Refresh after every fraction of the stream")
                   ->capture_default_str()
                   ->check(CLI::Range(1e-12, 1.0));
  auto* interval =
      sub->add_option("--refresh-interval", f.refresh_interval,
                      "Refresh after every INT samples")
          ->check(CLI::PositiveNumber);
  frac->excludes(interval);
  interval->excludes(frac);
  sub->add_option("--head", f.head, "Prediction head")
      ->capture_default_str()
      ->check(CLI::IsMember({"zeroshot", "ncm", "l1", "l2", "soba", "baseline"}));
  sub->add_option("--mode", f.mode, "Rotation mode of the soba head")
      ->capture_default_str()
      ->check(CLI::IsMember({"prototype_only", "symmetric"}));
  sub->add_option("--rank", f.rank, "Kept basis columns (0 = all)")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--temperature", f.temperature,
                  "Softmax temperature of the queue entropy")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--seed", f.seed, "Recorded in the metrics for provenance");
  sub->add_flag("--normalize-prototypes", f.normalize_prototypes,
                "L2-normalize rotated prototypes");
  sub->add_flag("--strict", f.strict,
                "Reject features whose norm is outside [0.99, 1.01]");
  sub->add_flag("--average-all-classes", f.all_class_average,
                "Divide the pooled covariance by N instead of populated classes");
  sub->add_flag("--primary-head-only", f.primary_head_only,
                "Score only the zero-shot and selected heads");
  sub->add_option("--metrics-out", f.metrics_out,
                  "Metrics JSON path (default: standard output)");
}

EngineConfig engine_config(const EngineFlags& f, std::size_t total) {
  EngineConfig cfg;
  cfg.fusion.alpha = f.alpha;
  cfg.fusion.head = *parse_head(f.head);
  cfg.fusion.mode = *parse_rotation_mode(f.mode);
  cfg.fusion.normalize_prototypes = f.normalize_prototypes;
  cfg.capacity = f.capacity;
  cfg.temperature = f.temperature;
  cfg.rank_keep = f.rank;
  cfg.covariance.average_over_all_classes = f.all_class_average;
  cfg.score_all_heads = !f.primary_head_only;
  cfg.schedule = f.refresh_interval > 0
                     ? RefreshSchedule::every(f.refresh_interval)
                     : RefreshSchedule::every_fraction(f.refresh_fraction, total);
  return cfg;
}

void emit_json(const nlohmann::json& j, const std::string& path,
               std::ostream& out) {
  if (path.empty()) {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream file(path, std::ios::trunc);
  if (!file) {
    throw FormatError(FormatError::Kind::io,
                      "cannot open '" + path + "' for writing");
  }
  file << j.dump(2) << '\n';
}

LoadedStream load(const EngineFlags& f) {
  return read_stream(f.features,
                     f.strict ? IngestMode::strict : IngestMode::renormalize);
}

void check_rank(const EngineFlags& f, const LoadedStream& s) {
  if (f.rank > s.text.dim()) {
    throw CLI::ValidationError("--rank", "exceeds the feature dimension " +
                                             std::to_string(s.text.dim()));
  }
}

int cmd_run(const EngineFlags& f, const std::string& predictions_out,
            bool queue_snapshot, std::ostream& out) {
  const LoadedStream s = load(f);
  check_rank(f, s);
  const EngineConfig cfg = engine_config(f, s.samples.size());
  const RunResult r = run_stream(s.samples, s.text, cfg);
  nlohmann::json j = metrics_to_json(r.metrics, cfg, s.text.num_classes());
  j["seed"] = f.seed;
  j["features"] = f.features;
  if (queue_snapshot) j["queue_snapshot"] = queue_snapshot_json(r.final_queue);
  emit_json(j, f.metrics_out, out);
  if (!predictions_out.empty()) {
    write_predictions_csv(predictions_out, r.predictions);
  }
  return kExitOk;
}

int cmd_sweep(EngineFlags f, const std::vector<double>& alphas,
              const std::vector<std::size_t>& capacities, bool include_timing,
              std::ostream& out) {
  const LoadedStream s = load(f);
  check_rank(f, s);
  nlohmann::json records = nlohmann::json::array();
  for (std::size_t capacity : capacities) {
    for (double alpha : alphas) {
      f.alpha = alpha;
      f.capacity = capacity;
      const EngineConfig cfg = engine_config(f, s.samples.size());
      const RunResult r = run_stream(s.samples, s.text, cfg);
      records.push_back(
          {{"alpha", alpha},
           {"capacity", capacity},
           {"metrics", metrics_to_json(r.metrics, cfg, s.text.num_classes(),
                                       include_timing)}});
    }
  }
  const nlohmann::json j = {{"schema_version", kMetricsSchemaVersion},
                            {"features", f.features},
                            {"seed", f.seed},
                            {"records", records}};
  emit_json(j, f.metrics_out, out);
  return kExitOk;
}

ConfusablePair parse_pair(const std::string& text) {
  std::istringstream in(text);
  ConfusablePair p;
  char c1 = 0, c2 = 0;
  if (!(in >> p.first >> c1 >> p.second >> c2 >> p.strength) || c1 != ':' ||
      c2 != ':' || !in.eof()) {
    throw CLI::ValidationError("--pair", "expected A:B:STRENGTH, got '" + text + "'");
  }
  return p;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Training-free test-time adaptation over embedding streams"};
  app.name("soba");
  app.require_subcommand(1);

  EngineFlags run_flags;
  std::string predictions_out;
  bool queue_snapshot = false;
  auto* run = app.add_subcommand("run", "Process one feature stream");
  add_engine_flags(run, run_flags, false);
  run->add_option("--predictions-out", predictions_out, "Per-sample CSV path");
  run->add_flag("--queue-snapshot", queue_snapshot,
                "Include the final queue contents in the metrics");

  EngineFlags sweep_flags;
  std::vector<double> alphas{15.0};
  std::vector<std::size_t> capacities{16};
  bool sweep_timing = true;
  auto* sweep = app.add_subcommand("sweep", "Grid over alpha and capacity");
  add_engine_flags(sweep, sweep_flags, true);
  sweep->add_option("--alpha", alphas, "Comma-separated alphas")
      ->delimiter(',')
      ->check(CLI::NonNegativeNumber);
  sweep->add_option("--capacity", capacities, "Comma-separated capacities")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  sweep->add_flag("!--no-timing", sweep_timing,
                  "Omit wall-clock timing from the records");

  SynthConfig synth_cfg;
  std::string synth_out, preset, shift;
  double shift_magnitude = 0.0;
  std::uint64_t shift_seed = 0;
  std::vector<double> anisotropy;
  std::vector<std::string> pairs;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic stream");
  synth->add_option("--out", synth_out, "Output stream path")->required();
  synth->add_option("--preset", preset, "Start from a named configuration")
      ->check(CLI::IsMember({"ref1"}));
  auto* o_seed = synth->add_option("--seed", synth_cfg.seed, "Generator seed");
  auto* o_classes = synth->add_option("--classes", synth_cfg.num_classes,
                                      "Number of classes");
  auto* o_dim = synth->add_option("--dim", synth_cfg.dim, "Feature dimension");
  auto* o_samples =
      synth->add_option("--samples", synth_cfg.samples, "Stream length");
  auto* o_sep = synth->add_option("--separation", synth_cfg.class_separation,
                                  "Polar angle of class means from the anchor");
  auto* o_noise = synth->add_option("--noise", synth_cfg.noise_std,
                                    "Per-coordinate noise std");
  auto* o_aniso = synth->add_option("--anisotropy", anisotropy,
                                    "Variance ratios of the leading axes")
                      ->delimiter(',');
  auto* o_pairs = synth->add_option("--pair", pairs,
                                    "Confusable pair A:B:STRENGTH (repeatable)");
  auto* o_text = synth->add_option("--text-noise", synth_cfg.text_noise,
                                   "Angle between text rows and class means");
  synth->add_option("--shift", shift, "Apply a distribution shift")
      ->check(CLI::IsMember({"style_rotation", "sketch_sparsify"}));
  synth->add_option("--shift-magnitude", shift_magnitude, "Shift magnitude")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--shift-seed", shift_seed, "Shift seed");

  std::vector<std::string> argv_store;
  argv_store.reserve(args.size() + 1);
  argv_store.push_back("soba");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());

    if (run->parsed()) {
      return cmd_run(run_flags, predictions_out, queue_snapshot, out);
    }
    if (sweep->parsed()) {
      return cmd_sweep(sweep_flags, alphas, capacities, sweep_timing, out);
    }

    // synth: preset first, then explicit overrides
    SynthConfig cfg = preset == "ref1" ? SynthConfig::ref1() : SynthConfig{};
    const auto take = [](CLI::Option* o, auto& dst, const auto& src) {
      if (o->count() > 0) dst = src;
    };
    take(o_seed, cfg.seed, synth_cfg.seed);
    take(o_classes, cfg.num_classes, synth_cfg.num_classes);
    take(o_dim, cfg.dim, synth_cfg.dim);
    take(o_samples, cfg.samples, synth_cfg.samples);
    take(o_sep, cfg.class_separation, synth_cfg.class_separation);
    take(o_noise, cfg.noise_std, synth_cfg.noise_std);
    take(o_aniso, cfg.anisotropy, anisotropy);
    take(o_text, cfg.text_noise, synth_cfg.text_noise);
    if (o_pairs->count() > 0) {
      cfg.confusable_pairs.clear();
      for (const auto& p : pairs) cfg.confusable_pairs.push_back(parse_pair(p));
    }
    SynthStream s = generate(cfg);
    nlohmann::json provenance = {{"generator", "synth"},
                                 {"config", to_json(cfg)}};
    if (!shift.empty()) {
      const ShiftKind kind = shift == "style_rotation"
                                 ? ShiftKind::style_rotation
                                 : ShiftKind::sketch_sparsify;
      s.samples = shift_stream(s.samples, kind, shift_magnitude, shift_seed);
      provenance["shift"] = {{"kind", shift},
                             {"magnitude", shift_magnitude},
                             {"seed", shift_seed}};
    }
    write_stream(synth_out, s.text, s.samples, provenance);
    return kExitOk;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const SynthError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace soba
