#pragma once

// Feature stream container. All integers and floats are little-endian,
// independent of the host byte order.
//
//   offset  size        field
//   0       4           magic "SOBA"
//   4       4           version (u32) = 1
//   8       4           d (u32)
//   12      4           N (u32)
//   16      8           sample_count (u64)
//   24      4*N*d       text weights, f32, row-major
//   ...     4           manifest byte length L (u32)
//   ...     L           manifest, UTF-8 JSON
//   ...     (4+4d)*S    records: label (u32, 0xFFFFFFFF = unknown), d x f32

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "soba/core.hpp"
#include "soba/engine.hpp"

namespace soba {

inline constexpr char kStreamMagic[4] = {'S', 'O', 'B', 'A'};
inline constexpr std::uint32_t kStreamVersion = 1;
inline constexpr std::uint32_t kUnknownLabel = 0xFFFFFFFFu;
inline constexpr std::size_t kHeaderBytes = 24;
inline constexpr int kMetricsSchemaVersion = 1;

class FormatError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, unsupported_version, corrupt, invalid };

  FormatError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// The file payload exactly as stored.
struct FeatureStreamFile {
  std::uint32_t dim = 0;
  std::uint32_t num_classes = 0;
  std::vector<float> text;         // num_classes * dim
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<std::uint32_t> labels;
  std::vector<float> features;     // labels.size() * dim

  std::size_t sample_count() const noexcept { return labels.size(); }
};

std::vector<std::uint8_t> encode_stream(const FeatureStreamFile& file);
FeatureStreamFile decode_stream(std::span<const std::uint8_t> bytes);

void write_stream_file(const std::filesystem::path& path,
                       const FeatureStreamFile& file);
FeatureStreamFile read_stream_file(const std::filesystem::path& path);

struct LoadedStream {
  TextWeights<double> text;
  std::vector<Sample<double>> samples;
  nlohmann::json manifest;
};

/// Converts domain values to the 32-bit container. Class names go to
/// manifest["class_names"]; `provenance` is stored under
/// manifest["provenance"].
FeatureStreamFile to_stream_file(const TextWeights<double>& w,
                                 std::span<const Sample<double>> samples,
                                 const nlohmann::json& provenance = {});

/// Validates and ingests per `mode` (rows and features are renormalized, or
/// rejected in strict mode when their norm is outside [0.99, 1.01]).
LoadedStream ingest_stream(const FeatureStreamFile& file,
                           IngestMode mode = IngestMode::renormalize);

void write_stream(const std::filesystem::path& path,
                  const TextWeights<double>& w,
                  std::span<const Sample<double>> samples,
                  const nlohmann::json& provenance = {});

LoadedStream read_stream(const std::filesystem::path& path,
                         IngestMode mode = IngestMode::renormalize);

/// Metrics document: a single object with a schema_version field.
nlohmann::json metrics_to_json(const RunMetrics& m, const EngineConfig& cfg,
                               Index num_classes, bool include_timing = true);

/// class index -> [{entropy, arrival_index}] in queue order.
nlohmann::json queue_snapshot_json(const DynamicQueue<double>& q);

/// sample_index,true_label,zeroshot_pred,fused_pred,entropy
void write_predictions_csv(const std::filesystem::path& path,
                           std::span<const SamplePrediction> predictions);

}  // namespace soba
