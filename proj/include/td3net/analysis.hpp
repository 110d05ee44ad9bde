#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "td3net/graph.hpp"
#include "td3net/network.hpp"

namespace td3 {

// Set of input time indices, one bit per index.
class IndexSet {
 public:
  IndexSet() = default;
  explicit IndexSet(std::int64_t bits) : bits_(bits), words_((bits + 63) / 64, 0) {}

  void set(std::int64_t i) { words_[static_cast<std::size_t>(i >> 6)] |= 1ULL << (i & 63); }
  bool test(std::int64_t i) const {
    return (words_[static_cast<std::size_t>(i >> 6)] >> (i & 63)) & 1ULL;
  }
  void merge(const IndexSet& other) {
    for (std::size_t w = 0; w < words_.size(); ++w) words_[w] |= other.words_[w];
  }
  bool any() const {
    for (auto w : words_)
      if (w) return true;
    return false;
  }
  bool operator==(const IndexSet& o) const { return bits_ == o.bits_ && words_ == o.words_; }
  std::int64_t size_bits() const { return bits_; }

  std::vector<std::int64_t> indices() const {
    std::vector<std::int64_t> out;
    for (std::int64_t i = 0; i < bits_; ++i)
      if (test(i)) out.push_back(i);
    return out;
  }

 private:
  std::int64_t bits_ = 0;
  std::vector<std::uint64_t> words_;
};

struct Interval {
  std::int64_t lo = 0;
  std::int64_t hi = 0;  // inclusive
  bool operator==(const Interval& o) const { return lo == o.lo && hi == o.hi; }
};

// Receptive fields for one activation path at every output time index.
struct ActivationRf {
  std::string path;
  std::vector<IndexSet> per_time;
};

struct RfEntry {
  std::string path;
  std::int64_t time = 0;
  std::vector<std::int64_t> field;        // sorted input indices
  std::vector<Interval> blind_spots;      // maximal gaps strictly inside the hull
};

// Maximal missing intervals strictly between min and max of a non-empty set.
std::vector<Interval> detect_blind_spots(const IndexSet& rf);
std::vector<Interval> detect_blind_spots(const std::vector<std::int64_t>& rf);

// Symbolic set propagation over the architecture metadata. Enumerates every
// temporal activation: each node plus the pre-sum sub-convolution outputs
// of multi-dilated layers. The classification head carries no time axis and
// is excluded.
std::vector<ActivationRf> receptive_fields(const GraphSpec& spec, std::int64_t t_len);

RfEntry receptive_field(const GraphSpec& spec, const std::string& path, std::int64_t time,
                        std::int64_t t_len);

// Independent oracle: runs the connectivity-linearized network (positive
// constant weights, BN/ReLU/dropout bypassed) and reads off which input
// columns receive nonzero gradient from the chosen activation.
std::vector<std::int64_t> gradient_rf_oracle(const Network<double>& net, const std::string& path,
                                             std::int64_t time, std::int64_t t_len);

struct CostRow {
  std::string path;
  std::string kind;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t params = 0;           // learnable scalars (conv/linear weights, bn affine, bias)
  std::int64_t buffers = 0;          // bn running statistics
  std::int64_t mac_flops = 0;        // 2 * MACs of the conv or linear kernel
  std::int64_t pointwise_flops = 0;  // bn/relu/sum/pool, reported separately
};

// Parameter and FLOP accounting from metadata alone. MACs count as two
// floating-point operations; the headline figure is the conv+linear MAC
// subtotal with the classifier reported separately.
struct CostReport {
  std::vector<CostRow> rows;
  std::int64_t in_channels = 0;
  std::int64_t t_len = 0;

  std::int64_t backend_params = 0;
  std::int64_t classifier_params = 0;
  std::int64_t backend_buffers = 0;
  std::int64_t backend_mac_flops = 0;
  std::int64_t classifier_mac_flops = 0;
  std::int64_t pointwise_flops = 0;

  std::int64_t total_params() const { return backend_params + classifier_params; }
  std::int64_t total_mac_flops() const { return backend_mac_flops + classifier_mac_flops; }
};

CostReport count_cost(const GraphSpec& spec, std::int64_t in_channels, std::int64_t t_len);
inline CostReport count_cost(const GraphSpec& spec) {
  return count_cost(spec, spec.config.in_channels, spec.config.seq_len);
}

// L2 norm over channels of the final backend activation, one row of T
// values per sample.
template <typename S>
Tensor<S> activation_map(Network<S>& net, const Tensor<S>& features) {
  Tape<S> tape;
  RunOptions opts;
  opts.mode = Mode::kEval;
  auto result = net.forward(tape, features, opts, false, false);
  const Tensor<S>& feat = tape.value(result.final_feature);
  const Shape s = detail::as_nct(feat.shape, "activation_map");
  const std::int64_t batch = s[0], channels = s[1], t_len = s[2];
  Tensor<S> map = Tensor<S>::zeros({batch, t_len});
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t t = 0; t < t_len; ++t) {
      S acc = S(0);
      for (std::int64_t c = 0; c < channels; ++c) {
        const S v = feat.data[static_cast<std::size_t>((n * channels + c) * t_len + t)];
        acc += v * v;
      }
      map.data[static_cast<std::size_t>(n * t_len + t)] = std::sqrt(acc);
    }
  return map;
}

// Walks a probe forward pass and checks that concatenation bookkeeping in
// the metadata matches the tensors a real forward produces.
template <typename S>
void verify_channel_bookkeeping(Network<S>& net, std::int64_t t_len) {
  Tape<S> tape;
  Tensor<S> probe = Tensor<S>::full({1, net.spec.config.in_channels, t_len}, S(1));
  RunOptions opts;
  auto result = net.forward(tape, probe, opts, false, true);
  for (std::size_t i = 0; i < net.spec.nodes.size(); ++i) {
    const NodeSpec& n = net.spec.nodes[i];
    if (n.kind == NodeKind::kInput || n.kind == NodeKind::kHead) continue;
    std::int64_t want_in = 0;
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      const int id = result.activation(net.spec.node(n.inputs[static_cast<std::size_t>(j)]).path);
      const Shape s = detail::as_nct(tape.value(id).shape, n.path);
      if (s[1] != n.in_widths[j])
        throw ConfigError(n.path + ": recorded input width " + std::to_string(n.in_widths[j]) +
                          " but tensor has " + std::to_string(s[1]));
      want_in += s[1];
    }
    if (want_in != n.in_channels_total())
      throw ConfigError(n.path + ": concatenated width does not add up");
    const Shape out = detail::as_nct(tape.value(result.activation(n.path)).shape, n.path);
    if (out[1] != n.out_channels)
      throw ConfigError(n.path + ": produced " + std::to_string(out[1]) + " channels, expected " +
                        std::to_string(n.out_channels));
    if (out[2] != t_len) throw ConfigError(n.path + ": temporal length not preserved");
  }
}

}  // namespace td3
