#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "soba/engine.hpp"
#include "soba/io.hpp"
#include "soba/synth.hpp"

namespace soba {
namespace {

double zeroshot_accuracy(const TextWeights<double>& w,
                         const std::vector<Sample<double>>& samples) {
  std::size_t correct = 0;
  for (const auto& s : samples) {
    correct += one_hot_argmax(inner_logits(s.feature, w)).class_index ==
               static_cast<Index>(*s.label);
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

TEST(Rng, EngineSequenceIsTheStandardOne) {
  // the standard fixes the 10000th output of a default-seeded mt19937_64
  SynthRng rng(5489);
  std::uint64_t x = 0;
  for (int i = 0; i < 10000; ++i) x = rng.next();
  EXPECT_EQ(x, 9981545732273789042ull);
}

TEST(Rng, VariatesInRange) {
  SynthRng rng(1);
  double sum = 0, sq = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.bounded(7), 7u);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / 20000, 0.0, 0.05);
  EXPECT_NEAR(sq / 20000, 1.0, 0.05);
  EXPECT_EQ(rng.bounded(1), 0u);
}

TEST(Generate, NoiselessLimitIsPerfectlyZeroShotSeparable) {
  auto c = SynthConfig::ref1();
  c.noise_std = 0;
  c.text_noise = 0;
  const auto s = generate(c);
  EXPECT_EQ(zeroshot_accuracy(s.text, s.samples), 1.0);
}

TEST(Generate, SameSeedGivesIdenticalBytes) {
  const auto c = SynthConfig::ref1();
  const auto a = encode_stream(to_stream_file(generate(c).text, generate(c).samples));
  const auto s = generate(c);
  const auto b = encode_stream(to_stream_file(s.text, s.samples));
  EXPECT_EQ(a, b);
  auto other = c;
  other.seed = 43;
  const auto t = generate(other);
  EXPECT_NE(encode_stream(to_stream_file(t.text, t.samples)), b);
}

TEST(Generate, Ref1EmpiricalMeansMatchRequestedMeans) {
  const auto c = SynthConfig::ref1();
  const auto s = generate(c);
  Matrix<double> sums = Matrix<double>::Zero(c.num_classes, c.dim);
  for (const auto& x : s.samples) sums.row(*x.label) += x.feature.values().transpose();
  double worst = 0;
  for (Index k = 0; k < c.num_classes; ++k) {
    const double cosine = sums.row(k).normalized().dot(s.class_means.row(k));
    worst = std::max(worst, std::acos(std::min(1.0, cosine)));
  }
  EXPECT_LE(worst, 0.05);
}

TEST(Generate, UnitNormFeaturesAndBalancedLabels) {
  const auto c = SynthConfig::ref1();
  const auto s = generate(c);
  std::vector<std::size_t> hist(static_cast<std::size_t>(c.num_classes), 0);
  for (const auto& x : s.samples) {
    EXPECT_NEAR(x.feature.values().norm(), 1.0, 1e-6);
    ++hist[*x.label];
  }
  const double uniform = static_cast<double>(c.samples) / c.num_classes;
  for (auto h : hist) EXPECT_LE(std::abs(h - uniform) / uniform, 0.05);
  for (Index k = 0; k < c.num_classes; ++k) {
    EXPECT_NEAR(s.text.rows().row(k).norm(), 1.0, 1e-12);
    EXPECT_NEAR(s.class_means.row(k).norm(), 1.0, 1e-12);
  }
}

TEST(Generate, TextNoiseIsTheRequestedAngle) {
  const auto c = SynthConfig::ref1();
  const auto s = generate(c);
  for (Index k = 0; k < c.num_classes; ++k) {
    const double angle = std::acos(s.text.rows().row(k).dot(s.class_means.row(k)));
    EXPECT_NEAR(angle, c.text_noise, 1e-9);
  }
}

TEST(Generate, ConfusablePairsAreCloserThanOthers) {
  const auto c = SynthConfig::ref1();
  const auto s = generate(c);
  const Matrix<double> g = s.class_means * s.class_means.transpose();
  EXPECT_GT(g(0, 1), g(0, 4));
  EXPECT_GT(g(2, 3), g(2, 5));
  EXPECT_GT(g(0, 1), g(5, 6));
}

TEST(Generate, RejectsInfeasibleAndInvalidConfigs) {
  SynthConfig c;
  c.num_classes = 60;
  c.dim = 3;
  c.samples = 600;
  try {
    generate(c);
    FAIL();
  } catch (const SynthError& e) {
    EXPECT_NE(std::string(e.what()).find("infeasible"), std::string::npos);
  }
  c = SynthConfig{};
  c.samples = 5;
  EXPECT_THROW(generate(c), SynthError);
  c = SynthConfig{};
  c.confusable_pairs = {{1, 1, 0.5}};
  EXPECT_THROW(generate(c), SynthError);
  c = SynthConfig{};
  c.class_separation = 0;
  EXPECT_THROW(generate(c), SynthError);
}

TEST(Generate, ManyClassesInLowDimensionWhenFeasible) {
  SynthConfig c;
  c.num_classes = 30;
  c.dim = 16;
  c.samples = 300;
  c.class_separation = 0.8;
  EXPECT_NO_THROW(generate(c));
}

TEST(Config, JsonRoundTrip) {
  const auto c = SynthConfig::ref1();
  const auto back = synth_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.confusable_pairs.size(), 2u);
  EXPECT_EQ(back.anisotropy, c.anisotropy);
}

TEST(Shift, ZeroMagnitudeIsIdentity) {
  const auto s = generate(SynthConfig::ref1());
  for (auto kind : {ShiftKind::style_rotation, ShiftKind::sketch_sparsify}) {
    const auto out = shift_stream(s.samples, kind, 0.0, 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
      ASSERT_EQ(out[i].feature.values(), s.samples[i].feature.values());
      ASSERT_EQ(out[i].label, s.samples[i].label);
    }
  }
}

TEST(Shift, StyleRotationIsAnIsometry) {
  const auto s = generate(SynthConfig::ref1());
  const auto out = shift_stream(s.samples, ShiftKind::style_rotation, 0.7, 3);
  for (std::size_t i = 0; i + 1 < 400; ++i) {
    EXPECT_NEAR(out[i].feature.values().norm(), 1.0, 1e-9);
    EXPECT_NEAR(out[i].feature.values().dot(out[i + 1].feature.values()),
                s.samples[i].feature.values().dot(s.samples[i + 1].feature.values()),
                1e-9);
  }
  EXPECT_NE(out[0].feature.values(), s.samples[0].feature.values());
}

TEST(Shift, SparsifyZeroesCoordinates) {
  const auto s = generate(SynthConfig::ref1());
  const auto out = shift_stream(s.samples, ShiftKind::sketch_sparsify, 0.25, 3);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& v = out[i].feature.values();
    EXPECT_EQ((v.array() == 0.0).count(), 16);
    EXPECT_NEAR(v.norm(), 1.0, 1e-12);
  }
}

TEST(Shift, DeterministicAndValidated) {
  const auto s = generate(SynthConfig::ref1());
  const auto a = shift_stream(s.samples, ShiftKind::style_rotation, 0.5, 9);
  const auto b = shift_stream(s.samples, ShiftKind::style_rotation, 0.5, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].feature.values(), b[i].feature.values());
  }
  EXPECT_THROW(shift_stream(s.samples, ShiftKind::style_rotation, 1.5, 9),
               DomainError);
}

TEST(Shift, ZeroShotAccuracyDegradesWithMagnitude) {
  const auto s = generate(SynthConfig::ref1());
  for (auto kind : {ShiftKind::style_rotation, ShiftKind::sketch_sparsify}) {
    double previous = 2.0;
    for (double m : {0.0, 0.25, 0.5}) {
      const double acc = zeroshot_accuracy(s.text, shift_stream(s.samples, kind, m, 42));
      EXPECT_LE(acc, previous) << "magnitude " << m;
      previous = acc;
    }
  }
}

}  // namespace
}  // namespace soba
