#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "td3net/ops.hpp"

namespace td3 {

// Sub-layer dilation ladders. `exponential` and `linear` follow the chunk
// index; `increasing_odd` is the per-layer ladder used by the plain dense
// baselines (1, 3, 5, ..., 15, then wrapping).
enum class DilationPattern { kExponential, kLinear, kIncreasingOdd };

inline std::int64_t pattern_dilation(DilationPattern p, std::int64_t i) {
  switch (p) {
    case DilationPattern::kExponential:
      return std::int64_t(1) << i;
    case DilationPattern::kLinear:
      return i == 0 ? 1 : 2 * i;  // 2*0 would be an invalid dilation
    case DilationPattern::kIncreasingOdd:
      return 2 * (i % 8) + 1;
  }
  return 1;
}

inline const char* pattern_name(DilationPattern p) {
  switch (p) {
    case DilationPattern::kExponential: return "exponential";
    case DilationPattern::kLinear: return "linear";
    case DilationPattern::kIncreasingOdd: return "increasing_odd";
  }
  return "?";
}

// Execution context for one forward pass.
struct RunOptions {
  Mode mode = Mode::kEval;
  bool update_running = false;  // BN running-stat EMA, training steps only
  bool linearize = false;       // bypass BN/ReLU/dropout (connectivity probes)
  std::mt19937_64* dropout_stream = nullptr;
};

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

template <typename S>
struct BnParams {
  Tensor<S> gamma;
  Tensor<S> beta;
  BnRunning<S> running;

  static BnParams init(std::int64_t channels) {
    BnParams p;
    p.gamma = Tensor<S>::full({channels}, S(1));
    p.beta = Tensor<S>::zeros({channels});
    p.running = BnRunning<S>::init(channels);
    return p;
  }
};

// Leased parameter leaves for one forward pass, keyed by path. Gradients
// are read back through these ids after backward.
template <typename S>
struct ParamLease {
  struct Entry {
    std::string name;
    int leaf = -1;
  };
  std::vector<Entry> entries;

  int lease(Tape<S>& tape, const std::string& name, const Tensor<S>& value) {
    int id = parameter(tape, value, name);
    entries.push_back({name, id});
    return id;
  }
};

template <typename S>
struct ForwardCtx {
  Tape<S>& tape;
  RunOptions opts;
  ParamLease<S>* lease = nullptr;             // null: lease as constants
  std::vector<std::pair<std::string, int>>* recorder = nullptr;

  int take(const std::string& name, const Tensor<S>& value) {
    if (lease) return lease->lease(tape, name, value);
    return constant(tape, value, name);
  }
  void record(const std::string& path, int id) {
    if (recorder) recorder->emplace_back(path, id);
  }
};

template <typename S>
int apply_bn_relu_dropout(ForwardCtx<S>& ctx, int x, BnParams<S>& bn, double dropout_p,
                          const std::string& path) {
  if (ctx.opts.linearize) return x;
  int gamma = ctx.take(path + "/bn.gamma", bn.gamma);
  int beta = ctx.take(path + "/bn.beta", bn.beta);
  int y = batch_norm(ctx.tape, x, gamma, beta, bn.running, ctx.opts.mode, kBnEps, kBnMomentum,
                     ctx.opts.update_running && ctx.opts.mode == Mode::kTrain, path + "/bn");
  y = relu(ctx.tape, y, path + "/relu");
  if (dropout_p > 0.0 && ctx.opts.mode == Mode::kTrain) {
    if (!ctx.opts.dropout_stream)
      throw UsageError(path + ": train-mode dropout needs an RNG stream");
    y = dropout(ctx.tape, y, dropout_p, ctx.opts.mode, *ctx.opts.dropout_stream, path + "/dropout");
  }
  return y;
}

// Temporal-convolution unit: dilated conv (kernel 3 unless probing other
// sizes) -> BN -> ReLU -> dropout.
template <typename S>
struct TcLayer {
  Tensor<S> weight;  // [C_out, C_in, K]
  BnParams<S> bn;
  std::int64_t dilation = 1;
  PadMode pad = PadMode::kSame;
  double dropout_p = 0.0;

  std::int64_t in_channels() const { return weight.shape[1]; }
  std::int64_t out_channels() const { return weight.shape[0]; }

  int forward(ForwardCtx<S>& ctx, int x, const std::string& path) {
    int w = ctx.take(path + "/w", weight);
    int y = conv1d(ctx.tape, x, w, dilation, pad, path + "/conv");
    return apply_bn_relu_dropout(ctx, y, bn, dropout_p, path);
  }
};

// Kernel-size-1 convolution used to rein in channel growth; preserves T.
template <typename S>
struct BottleneckLayer {
  Tensor<S> weight;  // [C_out, C_in, 1]
  BnParams<S> bn;

  std::int64_t in_channels() const { return weight.shape[1]; }
  std::int64_t out_channels() const { return weight.shape[0]; }

  int forward(ForwardCtx<S>& ctx, int x, const std::string& path) {
    int w = ctx.take(path + "/w", weight);
    int y = conv1d(ctx.tape, x, w, 1, PadMode::kSame, path + "/conv");
    return apply_bn_relu_dropout(ctx, y, bn, 0.0, path);
  }
};

// One densely connected multi-dilated layer: sub-convolution i reads the
// i-th skip-connected chunk with its own dilation factor, the sub outputs
// are summed element-wise, then one shared BN/ReLU/dropout is applied.
// `per_sub_bn` switches to normalizing each sub output before the sum.
template <typename S>
struct MultiDilatedLayer {
  std::vector<Tensor<S>> sub_weights;          // sub i: [k, chunk_i, 3]
  std::vector<std::int64_t> sub_dilations;
  BnParams<S> bn;                              // shared, on the summed output
  std::vector<BnParams<S>> sub_bn;             // only when per_sub_bn
  bool per_sub_bn = false;
  PadMode pad = PadMode::kSame;
  double dropout_p = 0.0;

  std::int64_t growth() const { return sub_weights.front().shape[0]; }
  std::int64_t chunk_width(std::size_t i) const { return sub_weights[i].shape[1]; }
  std::size_t num_subs() const { return sub_weights.size(); }

  int forward_chunks(ForwardCtx<S>& ctx, const std::vector<int>& chunks, const std::string& path) {
    if (chunks.size() != sub_weights.size())
      throw ConfigError(path + ": expected " + std::to_string(sub_weights.size()) +
                        " input chunks, got " + std::to_string(chunks.size()));
    std::vector<int> parts;
    parts.reserve(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const Shape in = detail::as_nct(ctx.tape.value(chunks[i]).shape, path);
      if (in[1] != chunk_width(i))
        throw ConfigError(path + ": chunk " + std::to_string(i) + " has " + std::to_string(in[1]) +
                          " channels, expected " + std::to_string(chunk_width(i)));
      const std::string sub_path = path + "/sub." + std::to_string(i);
      int w = ctx.take(sub_path + "/w", sub_weights[i]);
      int y = conv1d(ctx.tape, chunks[i], w, sub_dilations[i], pad, sub_path + "/conv");
      if (per_sub_bn && !ctx.opts.linearize) {
        int g = ctx.take(sub_path + "/bn.gamma", sub_bn[i].gamma);
        int b = ctx.take(sub_path + "/bn.beta", sub_bn[i].beta);
        y = batch_norm(ctx.tape, y, g, b, sub_bn[i].running, ctx.opts.mode, kBnEps, kBnMomentum,
                       ctx.opts.update_running && ctx.opts.mode == Mode::kTrain, sub_path + "/bn");
        y = relu(ctx.tape, y, sub_path + "/relu");
      }
      ctx.record(sub_path, y);
      parts.push_back(y);
    }
    int summed = add_n(ctx.tape, parts, path + "/sum");
    if (per_sub_bn) {
      if (ctx.opts.linearize || dropout_p <= 0.0 || ctx.opts.mode != Mode::kTrain) return summed;
      return dropout(ctx.tape, summed, dropout_p, ctx.opts.mode, *ctx.opts.dropout_stream,
                     path + "/dropout");
    }
    return apply_bn_relu_dropout(ctx, summed, bn, dropout_p, path);
  }

  // Whole-stack entry point: X carries the concatenated chunks
  // [chunk_0 | chunk_1 | ...] along the channel axis.
  int forward(ForwardCtx<S>& ctx, int x, const std::string& path) {
    const Shape in = detail::as_nct(ctx.tape.value(x).shape, path);
    std::int64_t want = 0;
    for (std::size_t i = 0; i < sub_weights.size(); ++i) want += chunk_width(i);
    if (in[1] != want)
      throw ConfigError(path + ": input has " + std::to_string(in[1]) + " channels, expected " +
                        std::to_string(want));
    std::vector<int> chunks;
    std::int64_t at = 0;
    for (std::size_t i = 0; i < sub_weights.size(); ++i) {
      chunks.push_back(slice_channels(ctx.tape, x, at, at + chunk_width(i),
                                      path + "/chunk." + std::to_string(i)));
      at += chunk_width(i);
    }
    return forward_chunks(ctx, chunks, path);
  }
};

}  // namespace td3
