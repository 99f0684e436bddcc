#include "soba/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

namespace soba {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(FormatError::Kind::corrupt,
                        std::string("corrupt at byte offset ") +
                            std::to_string(pos_) + ": truncated " + what +
                            " (need " + std::to_string(n) + " bytes, " +
                            std::to_string(remaining()) + " left)");
    }
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view text(std::size_t n) {
    std::string_view s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

[[noreturn]] void invalid(const std::string& what) {
  throw FormatError(FormatError::Kind::invalid, what);
}

void check_finite(std::span<const float> values, const char* what) {
  for (float v : values) {
    if (!std::isfinite(v)) invalid(std::string(what) + ": non-finite value");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_stream(const FeatureStreamFile& file) {
  const std::size_t d = file.dim;
  const std::size_t n = file.num_classes;
  if (file.text.size() != n * d) invalid("encode: text block size mismatch");
  if (file.features.size() != file.labels.size() * d) {
    invalid("encode: feature block size mismatch");
  }
  const std::string manifest = file.manifest.dump();
  if (manifest.size() > std::numeric_limits<std::uint32_t>::max()) {
    invalid("encode: manifest too large");
  }

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 4 * n * d + 4 + manifest.size() +
              file.labels.size() * (4 + 4 * d));
  out.insert(out.end(), std::begin(kStreamMagic), std::end(kStreamMagic));
  put_u32(out, kStreamVersion);
  put_u32(out, file.dim);
  put_u32(out, file.num_classes);
  put_u64(out, file.labels.size());
  for (float v : file.text) put_f32(out, v);
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out.insert(out.end(), manifest.begin(), manifest.end());
  for (std::size_t i = 0; i < file.labels.size(); ++i) {
    put_u32(out, file.labels[i]);
    for (std::size_t j = 0; j < d; ++j) put_f32(out, file.features[i * d + j]);
  }
  return out;
}

FeatureStreamFile decode_stream(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kStreamMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::bad_magic,
                      "not a feature stream (bad magic)");
  }
  r.text(4);
  r.need(4, "version");
  const std::uint32_t version = r.u32();
  if (version != kStreamVersion) {
    throw FormatError(FormatError::Kind::unsupported_version,
                      "unsupported version " + std::to_string(version));
  }
  r.need(kHeaderBytes - 8, "header");
  FeatureStreamFile f;
  f.dim = r.u32();
  f.num_classes = r.u32();
  const std::uint64_t count = r.u64();
  if (f.dim == 0) invalid("header: zero dimension");
  if (f.num_classes == 0) invalid("header: zero classes");

  // Bounds-check every declared size before allocating from it.
  const std::uint64_t d = f.dim;
  if (f.num_classes > r.remaining() / 4 / d) {
    r.need(std::numeric_limits<std::size_t>::max(), "text block");
  }
  f.text.resize(static_cast<std::size_t>(d * f.num_classes));
  for (float& v : f.text) v = r.f32();

  r.need(4, "manifest length");
  const std::uint32_t manifest_len = r.u32();
  r.need(manifest_len, "manifest");
  try {
    f.manifest = nlohmann::json::parse(r.text(manifest_len));
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("manifest: ") + e.what());
  }

  const std::uint64_t record_bytes = 4 + 4 * d;
  const std::uint64_t available = r.remaining() / record_bytes;
  if (count > available) {
    const std::size_t bad = r.offset() + available * record_bytes;
    throw FormatError(FormatError::Kind::corrupt,
                      "corrupt at byte offset " + std::to_string(bad) +
                          ": record " + std::to_string(available) + " of " +
                          std::to_string(count) + " is truncated");
  }
  if (r.remaining() != count * record_bytes) {
    throw FormatError(
        FormatError::Kind::corrupt,
        "corrupt at byte offset " +
            std::to_string(r.offset() + count * record_bytes) + ": " +
            std::to_string(r.remaining() - count * record_bytes) +
            " trailing bytes after the declared records");
  }
  f.labels.resize(static_cast<std::size_t>(count));
  f.features.resize(static_cast<std::size_t>(count * d));
  for (std::size_t i = 0; i < f.labels.size(); ++i) {
    f.labels[i] = r.u32();
    for (std::size_t j = 0; j < d; ++j) f.features[i * d + j] = r.f32();
  }
  check_finite(f.text, "text block");
  check_finite(f.features, "records");
  return f;
}

void write_stream_file(const std::filesystem::path& path,
                       const FeatureStreamFile& file) {
  const auto bytes = encode_stream(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError(FormatError::Kind::io,
                      "cannot open '" + path.string() + "' for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw FormatError(FormatError::Kind::io,
                      "write failed for '" + path.string() + "'");
  }
}

FeatureStreamFile read_stream_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError(FormatError::Kind::io,
                      "cannot open '" + path.string() + "'");
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_stream(bytes);
}

FeatureStreamFile to_stream_file(const TextWeights<double>& w,
                                 std::span<const Sample<double>> samples,
                                 const nlohmann::json& provenance) {
  FeatureStreamFile f;
  f.dim = static_cast<std::uint32_t>(w.dim());
  f.num_classes = static_cast<std::uint32_t>(w.num_classes());
  f.text.reserve(static_cast<std::size_t>(w.num_classes() * w.dim()));
  for (Index k = 0; k < w.num_classes(); ++k) {
    for (Index j = 0; j < w.dim(); ++j) {
      f.text.push_back(static_cast<float>(w.rows()(k, j)));
    }
  }
  f.manifest = {{"class_names", w.class_names()}};
  if (!provenance.is_null()) f.manifest["provenance"] = provenance;
  f.labels.reserve(samples.size());
  f.features.reserve(samples.size() * static_cast<std::size_t>(w.dim()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.feature.dim() != w.dim()) {
      throw DimensionError("sample " + std::to_string(i) + ": " +
                           dimension_report("feature", w.dim(), s.feature.dim()));
    }
    f.labels.push_back(s.label.value_or(kUnknownLabel));
    for (Index j = 0; j < w.dim(); ++j) {
      f.features.push_back(static_cast<float>(s.feature.values()(j)));
    }
  }
  return f;
}

LoadedStream ingest_stream(const FeatureStreamFile& file, IngestMode mode) {
  const Index d = file.dim;
  const Index n = file.num_classes;
  std::vector<std::string> names;
  if (file.manifest.contains("class_names")) {
    try {
      names = file.manifest.at("class_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      invalid(std::string("manifest class_names: ") + e.what());
    }
  }
  LoadedStream out;
  try {
    const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                         Eigen::RowMajor>>
        text(file.text.data(), n, d);
    out.text = TextWeights<double>::ingest(text, std::move(names), mode);
    out.samples.reserve(file.labels.size());
    for (std::size_t i = 0; i < file.labels.size(); ++i) {
      const Eigen::Map<const Eigen::VectorXf> raw(
          file.features.data() + i * static_cast<std::size_t>(d), d);
      std::optional<std::uint32_t> label;
      if (file.labels[i] != kUnknownLabel) {
        if (file.labels[i] >= file.num_classes) {
          invalid("record " + std::to_string(i) + ": label " +
                  std::to_string(file.labels[i]) + " out of range");
        }
        label = file.labels[i];
      }
      try {
        out.samples.push_back({FeatureVector<double>::ingest(raw, mode), label});
      } catch (const DomainError& e) {
        invalid("record " + std::to_string(i) + ": " + e.what());
      }
    }
  } catch (const DomainError& e) {
    invalid(e.what());
  } catch (const DimensionError& e) {
    invalid(e.what());
  }
  out.manifest = file.manifest;
  return out;
}

void write_stream(const std::filesystem::path& path,
                  const TextWeights<double>& w,
                  std::span<const Sample<double>> samples,
                  const nlohmann::json& provenance) {
  write_stream_file(path, to_stream_file(w, samples, provenance));
}

LoadedStream read_stream(const std::filesystem::path& path, IngestMode mode) {
  return ingest_stream(read_stream_file(path), mode);
}

void write_predictions_csv(const std::filesystem::path& path,
                           std::span<const SamplePrediction> predictions) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw FormatError(FormatError::Kind::io,
                      "cannot open '" + path.string() + "' for writing");
  }
  out << "sample_index,true_label,zeroshot_pred,fused_pred,entropy\n";
  out.precision(17);
  for (const auto& p : predictions) {
    out << p.index << ',';
    if (p.true_label) out << *p.true_label;
    out << ',' << p.zeroshot_pred << ',' << p.fused_pred << ',' << p.entropy
        << '\n';
  }
}

}  // namespace soba
