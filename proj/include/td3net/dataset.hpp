#pragma once

#include <cstdint>

#include "td3net/config.hpp"
#include "td3net/tensor.hpp"

namespace td3 {

// Feature sequences with integer labels; every sample shares channels and T.
struct FeatureSet {
  std::int64_t channels = 0;
  std::int64_t t_len = 0;
  std::vector<Tensor<double>> x;  // [C,T] per sample
  std::vector<std::int64_t> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(x.size()); }
};

struct Sample {
  Tensor<double> x;  // [channels, T]
  std::int64_t label = 0;
};

// Multi-scale sequence-classification task. Class identity is pure relative
// geometry between three motifs of different temporal spans:
//   channel 0: span-3 anchor motif at a jittered base position p
//   channel 1: span-9 triangle centered at p + 5 + 2*(c mod 5)
//   channel 2: span-19 half-sine starting at p + 4*(c div 5)
//   channels 3+: noise only
// Marginal motif shapes are class-independent, so solving the task requires
// relating positions across those spans. Generation is a pure function of
// (spec, split, index).
Sample synth_sample(const DatasetSpec& spec, bool val_split, std::int64_t index);

std::vector<Tensor<double>> synth_split(const DatasetSpec& spec, bool val_split,
                                        std::vector<std::int64_t>* labels);

FeatureSet synth_features(const DatasetSpec& spec, bool val_split);

}  // namespace td3
