#include "soba/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>

namespace soba {

std::uint64_t SynthRng::bounded(std::uint64_t n) {
  if (n == 0) throw SynthError("bounded: empty range");
  const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
  for (;;) {
    const std::uint64_t x = engine_();
    if (x >= threshold) return x % n;
  }
}

double SynthRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u = 0, v = 0, s = 0;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double scale = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * scale;
  has_spare_ = true;
  return u * scale;
}

namespace {

Vector<double> normal_vector(SynthRng& rng, Index d) {
  Vector<double> v(d);
  for (Index i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

std::vector<Index> permutation(SynthRng& rng, Index d) {
  std::vector<Index> p(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) p[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = p.size(); i > 1; --i) {
    std::swap(p[i - 1], p[rng.bounded(i)]);
  }
  return p;
}

}  // namespace

SynthConfig SynthConfig::ref1() {
  SynthConfig c;
  c.seed = 42;
  c.num_classes = 20;
  c.dim = 64;
  c.samples = 5000;
  c.class_separation = 0.1;
  c.noise_std = 0.01;
  c.anisotropy = {10.0, 10.0};
  c.confusable_pairs = {{0, 1, 0.5}, {2, 3, 0.5}};
  c.text_noise = 0.15;
  return c;
}

void SynthConfig::validate() const {
  if (num_classes < 2) throw SynthError("synth: need at least 2 classes");
  if (dim < 2) throw SynthError("synth: need dimension >= 2");
  if (samples < static_cast<std::size_t>(num_classes)) {
    throw SynthError("synth: need at least one sample per class");
  }
  if (!(class_separation > 0.0 && class_separation <= std::numbers::pi / 2)) {
    throw SynthError("synth: class_separation must lie in (0, pi/2]");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw SynthError("synth: noise_std must be finite and nonnegative");
  }
  if (!(text_noise >= 0.0 && text_noise <= std::numbers::pi / 2)) {
    throw SynthError("synth: text_noise must lie in [0, pi/2]");
  }
  if (static_cast<Index>(anisotropy.size()) > dim) {
    throw SynthError("synth: more anisotropy ratios than dimensions");
  }
  for (double r : anisotropy) {
    if (!(r > 0.0) || !std::isfinite(r)) {
      throw SynthError("synth: anisotropy ratios must be positive");
    }
  }
  for (const auto& p : confusable_pairs) {
    if (p.first < 0 || p.first >= num_classes || p.second < 0 ||
        p.second >= num_classes || p.first == p.second) {
      throw SynthError("synth: confusable pair needs two distinct classes");
    }
    if (!(p.strength >= 0.0 && p.strength < 1.0)) {
      throw SynthError("synth: confusable strength must lie in [0, 1)");
    }
  }
}

SynthStream generate(const SynthConfig& cfg) {
  cfg.validate();
  const Index n = cfg.num_classes;
  const Index d = cfg.dim;
  SynthRng rng(cfg.seed);

  Vector<double> anchor = normal_vector(rng, d);
  anchor.normalize();

  Matrix<double> residual(d, n);
  for (Index k = 0; k < n; ++k) residual.col(k) = normal_vector(rng, d);
  const bool orthogonal = n <= d - 1;
  for (Index k = 0; k < n; ++k) {
    auto col = residual.col(k);
    col -= anchor * anchor.dot(col);
    if (orthogonal) {
      for (Index j = 0; j < k; ++j) col -= residual.col(j) * residual.col(j).dot(col);
    }
    const double norm = col.norm();
    if (!(norm > 1e-12)) throw SynthError("synth: degenerate direction draw");
    col /= norm;
  }

  const double s = cfg.class_separation;
  Matrix<double> means(n, d);
  for (Index k = 0; k < n; ++k) {
    means.row(k) =
        (std::cos(s) * anchor + std::sin(s) * residual.col(k)).transpose();
  }

  // With orthogonal residuals every pair sits at acos(cos^2 s).
  const double nominal = std::acos(std::cos(s) * std::cos(s));
  const Matrix<double> gram = means * means.transpose();
  double max_cos = -1.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) max_cos = std::max(max_cos, gram(i, j));
  }
  const double min_angle = std::acos(std::clamp(max_cos, -1.0, 1.0));
  if (min_angle < 0.5 * nominal) {
    throw SynthError("synth: infeasible separation: " + std::to_string(n) +
                     " classes in " + std::to_string(d) +
                     " dimensions reach a minimum pairwise angle of " +
                     std::to_string(min_angle) + " rad, below half the " +
                     "nominal " + std::to_string(nominal) + " rad");
  }

  for (const auto& p : cfg.confusable_pairs) {
    Eigen::RowVectorXd pulled = (1.0 - p.strength) * means.row(p.second) +
                                p.strength * means.row(p.first);
    means.row(p.second) = pulled / pulled.norm();
  }

  Matrix<double> text(n, d);
  for (Index k = 0; k < n; ++k) {
    const Vector<double> mu = means.row(k).transpose();
    Vector<double> v = normal_vector(rng, d);
    v -= mu * mu.dot(v);
    v.normalize();
    text.row(k) =
        (std::cos(cfg.text_noise) * mu + std::sin(cfg.text_noise) * v)
            .transpose();
  }

  std::vector<std::uint32_t> labels(cfg.samples);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<std::uint32_t>(i % static_cast<std::size_t>(n));
  }
  for (std::size_t i = labels.size(); i > 1; --i) {
    std::swap(labels[i - 1], labels[rng.bounded(i)]);
  }

  Vector<double> sigma = Vector<double>::Constant(d, cfg.noise_std);
  for (std::size_t j = 0; j < cfg.anisotropy.size(); ++j) {
    sigma(static_cast<Index>(j)) *= std::sqrt(cfg.anisotropy[j]);
  }

  SynthStream out;
  out.samples.reserve(cfg.samples);
  Vector<double> x(d);
  for (std::uint32_t y : labels) {
    for (Index j = 0; j < d; ++j) {
      x(j) = means(static_cast<Index>(y), j) + sigma(j) * rng.normal();
    }
    out.samples.push_back({FeatureVector<double>::ingest(x), y});
  }
  out.text = TextWeights<double>::ingest(text);
  out.class_means = std::move(means);
  return out;
}

std::vector<Sample<double>> shift_stream(std::span<const Sample<double>> stream,
                                         ShiftKind kind, double magnitude,
                                         std::uint64_t seed) {
  if (!(magnitude >= 0.0 && magnitude <= 1.0)) {
    throw DomainError("shift_stream: magnitude must lie in [0, 1]");
  }
  std::vector<Sample<double>> out(stream.begin(), stream.end());
  if (magnitude == 0.0 || out.empty()) return out;
  const Index d = out.front().feature.dim();
  SynthRng rng(seed);
  const std::vector<Index> perm = permutation(rng, d);

  if (kind == ShiftKind::style_rotation) {
    std::vector<std::pair<double, double>> rot;
    for (Index p = 0; p + 1 < d; p += 2) {
      const double theta =
          magnitude * (std::numbers::pi / 4) * (1.0 + rng.uniform());
      rot.emplace_back(std::cos(theta), std::sin(theta));
    }
    for (auto& s : out) {
      Vector<double> v = s.feature.values();
      for (std::size_t p = 0; p < rot.size(); ++p) {
        const Index a = perm[2 * p];
        const Index b = perm[2 * p + 1];
        const auto [c, sn] = rot[p];
        const double va = v(a), vb = v(b);
        v(a) = c * va - sn * vb;
        v(b) = sn * va + c * vb;
      }
      s.feature = FeatureVector<double>::ingest(v);
    }
    return out;
  }

  const auto zeroed = std::min<Index>(
      static_cast<Index>(std::floor(magnitude * static_cast<double>(d))),
      d - 1);
  for (auto& s : out) {
    Vector<double> v = s.feature.values();
    for (Index i = 0; i < zeroed; ++i) v(perm[static_cast<std::size_t>(i)]) = 0.0;
    if (v.norm() > 0.0) s.feature = FeatureVector<double>::ingest(v);
  }
  return out;
}

nlohmann::json to_json(const SynthConfig& cfg) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : cfg.confusable_pairs) {
    pairs.push_back({{"first", p.first},
                     {"second", p.second},
                     {"strength", p.strength}});
  }
  return {{"seed", cfg.seed},
          {"num_classes", cfg.num_classes},
          {"dim", cfg.dim},
          {"samples", cfg.samples},
          {"class_separation", cfg.class_separation},
          {"noise_std", cfg.noise_std},
          {"covariance",
           cfg.anisotropy.empty() ? nlohmann::json("isotropic")
                                  : nlohmann::json{{"anisotropic",
                                                    cfg.anisotropy}}},
          {"confusable_pairs", pairs},
          {"text_noise", cfg.text_noise}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.num_classes = j.at("num_classes").get<Index>();
  c.dim = j.at("dim").get<Index>();
  c.samples = j.at("samples").get<std::size_t>();
  c.class_separation = j.at("class_separation").get<double>();
  c.noise_std = j.at("noise_std").get<double>();
  const auto& cov = j.at("covariance");
  if (cov.is_object()) {
    c.anisotropy = cov.at("anisotropic").get<std::vector<double>>();
  }
  for (const auto& p : j.at("confusable_pairs")) {
    c.confusable_pairs.push_back({p.at("first").get<Index>(),
                                  p.at("second").get<Index>(),
                                  p.at("strength").get<double>()});
  }
  c.text_noise = j.at("text_noise").get<double>();
  return c;
}

}  // namespace soba
