#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "td3net/config.hpp"

namespace td3 {

enum class NodeKind { kInput, kBottleneck, kTcLayer, kMdLayer, kHead };

// One tensor-producing step. Multiple inputs are concatenated along the
// channel axis, except for multi-dilated layers where input i is consumed
// as skip-connected chunk i.
struct NodeSpec {
  NodeKind kind = NodeKind::kInput;
  std::string path;
  std::vector<int> inputs;
  std::vector<std::int64_t> in_widths;         // channels per input, build-time bookkeeping
  std::int64_t out_channels = 0;
  std::int64_t kernel = 0;                     // bottleneck: 1, tc/md subs: 3
  std::int64_t dilation = 1;                   // tc layers
  std::vector<std::int64_t> sub_dilations;     // md layers, one per chunk
  bool has_dropout = false;

  std::int64_t in_channels_total() const {
    std::int64_t n = 0;
    for (auto w : in_widths) n += w;
    return n;
  }
};

// Architecture metadata: enough to run a forward pass, count parameters
// and FLOPs, and reconstruct the receptive-field graph without executing
// anything.
struct GraphSpec {
  ModelConfig config;
  std::vector<NodeSpec> nodes;  // topological order, node 0 is the input
  int final_feature = -1;       // last backend activation (activation-map tap)
  int head = -1;

  const NodeSpec& node(int id) const { return nodes[static_cast<std::size_t>(id)]; }
  int find(const std::string& path) const;  // -1 when absent
};

// Canonical block depths for the plain dense baselines (first `b` entries).
std::vector<std::int64_t> baseline_block_depths(std::int64_t b);

// Sub-layer dilations for layer position `layer` under a variant.
std::vector<std::int64_t> sub_dilations_for(Variant variant, DilationPattern pattern,
                                            std::int64_t layer);

GraphSpec plan_network(const ModelConfig& config);

}  // namespace td3
