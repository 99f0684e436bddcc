#pragma once

// Deterministic class-conditional Gaussian streams on the unit sphere.
//
// Randomness comes from std::mt19937_64 seeded with the config seed. Its
// output sequence is fixed by the C++ standard, and every derived variate is
// computed here rather than by <random> distributions (whose algorithms are
// implementation-defined):
//   uniform(0,1)   = (x >> 11) * 2^-53
//   bounded(n)     = rejection sampling of x below 2^64 - (2^64 mod n), x mod n
//   normal         = Marsaglia polar method, second variate cached
// Draw order: anchor (d normals), residual directions (d*N normals),
// text perturbations (d normals per class), label shuffle (Fisher-Yates from
// the back), then d normals of noise per sample.

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "soba/core.hpp"

namespace soba {

class SynthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Portable variates over std::mt19937_64.
class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  std::uint64_t bounded(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0;
};

struct ConfusablePair {
  Index first = 0;
  Index second = 0;
  double strength = 0;  // in [0, 1): fraction of the angle to close
};

struct SynthConfig {
  std::uint64_t seed = 42;
  Index num_classes = 20;
  Index dim = 64;
  std::size_t samples = 5000;
  double class_separation = 0.1;  // polar angle of each mean from the anchor
  double noise_std = 0.01;        // per-coordinate std of the shared noise
  // Variance ratios of the leading coordinate axes against the rest; empty
  // means isotropic.
  std::vector<double> anisotropy;
  std::vector<ConfusablePair> confusable_pairs;
  double text_noise = 0.15;  // radians between text row and class mean

  /// REF-1: seed 42, N=20, d=64, 5000 samples, variance 10:1 on two axes,
  /// two confusable pairs, text_noise 0.15 rad.
  static SynthConfig ref1();

  void validate() const;
};

struct SynthStream {
  TextWeights<double> text;
  std::vector<Sample<double>> samples;
  Matrix<double> class_means;  // N x d, unit rows
};

SynthStream generate(const SynthConfig& cfg);

enum class ShiftKind { style_rotation, sketch_sparsify };

/// Deterministic per seed. magnitude 0 is the identity; style_rotation
/// applies Givens rotations by angle magnitude * theta_p (theta_p uniform in
/// [pi/4, pi/2]) on random coordinate pairs; sketch_sparsify zeroes
/// floor(magnitude * d) random coordinates (at most d - 1) and renormalizes.
std::vector<Sample<double>> shift_stream(std::span<const Sample<double>> stream,
                                         ShiftKind kind, double magnitude,
                                         std::uint64_t seed);

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

}  // namespace soba
