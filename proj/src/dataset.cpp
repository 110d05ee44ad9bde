#include "td3net/dataset.hpp"

#include <cmath>
#include <random>

#include "td3net/checkpoint.hpp"
#include "td3net/rng.hpp"

namespace td3 {

namespace {

constexpr double kAnchorAmp = 2.0;
constexpr double kTriangleAmp = 2.0;
constexpr double kWaveAmp = 1.5;
constexpr std::int64_t kTriangleHalf = 4;   // span 9
constexpr std::int64_t kWaveSpan = 19;
constexpr std::int64_t kBasePos = 2;

void check_layout(const DatasetSpec& spec) {
  const std::int64_t p_max = kBasePos + 2 * spec.jitter;
  const std::int64_t g1_max = 5 + 2 * ((spec.classes - 1) % 5);
  const std::int64_t g2_max = 4 * ((spec.classes - 1) / 5);
  if (p_max + g1_max + kTriangleHalf > spec.seq_len - 1 ||
      p_max + g2_max + kWaveSpan - 1 > spec.seq_len - 1)
    throw ConfigError("dataset: seq_len " + std::to_string(spec.seq_len) +
                      " too short for " + std::to_string(spec.classes) +
                      " classes with jitter " + std::to_string(spec.jitter));
}

}  // namespace

Sample synth_sample(const DatasetSpec& spec, bool val_split, std::int64_t index) {
  spec.validate();
  check_layout(spec);
  const std::int64_t label = index % spec.classes;
  auto rng = make_stream(spec.seed, (val_split ? "val:" : "train:") + std::to_string(index));

  Tensor<double> x = Tensor<double>::zeros({spec.channels, spec.seq_len});
  std::uniform_int_distribution<std::int64_t> place(0, 2 * spec.jitter);
  const std::int64_t p = kBasePos + (spec.jitter > 0 ? place(rng) : 0);

  // anchor: sharp span-3 motif
  const double anchor[3] = {kAnchorAmp, -kAnchorAmp, kAnchorAmp};
  for (std::int64_t i = 0; i < 3; ++i)
    if (p + i < spec.seq_len) x.at2(0, p + i) += anchor[i];

  // mid-range triangle, center at class-specific distance from the anchor
  const std::int64_t mid = p + 5 + 2 * (label % 5);
  for (std::int64_t dt = -kTriangleHalf; dt <= kTriangleHalf; ++dt) {
    const std::int64_t t = mid + dt;
    if (t < 0 || t >= spec.seq_len) continue;
    x.at2(1, t) += kTriangleAmp * (1.0 - std::abs(static_cast<double>(dt)) / 5.0);
  }

  // long-range half-sine, start offset encodes the coarse class group
  const std::int64_t wave_start = p + 4 * (label / 5);
  for (std::int64_t i = 0; i < kWaveSpan; ++i) {
    const std::int64_t t = wave_start + i;
    if (t >= spec.seq_len) break;
    x.at2(2, t) += kWaveAmp * std::sin(M_PI * static_cast<double>(i) / (kWaveSpan - 1));
  }

  if (spec.noise > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise);
    for (double& v : x.data) v += noise(rng);
  }
  return Sample{std::move(x), label};
}

std::vector<Tensor<double>> synth_split(const DatasetSpec& spec, bool val_split,
                                        std::vector<std::int64_t>* labels) {
  const std::int64_t n = val_split ? spec.val_size : spec.train_size;
  std::vector<Tensor<double>> xs;
  xs.reserve(static_cast<std::size_t>(n));
  if (labels) labels->clear();
  for (std::int64_t i = 0; i < n; ++i) {
    Sample s = synth_sample(spec, val_split, i);
    xs.push_back(std::move(s.x));
    if (labels) labels->push_back(s.label);
  }
  return xs;
}

FeatureSet synth_features(const DatasetSpec& spec, bool val_split) {
  FeatureSet fs;
  fs.channels = spec.channels;
  fs.t_len = spec.seq_len;
  fs.x = synth_split(spec, val_split, &fs.labels);
  return fs;
}

}  // namespace td3
