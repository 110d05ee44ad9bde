#include "td3net/graph.hpp"

#include <cmath>

namespace td3 {

int GraphSpec::find(const std::string& path) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].path == path) return static_cast<int>(i);
  return -1;
}

std::vector<std::int64_t> baseline_block_depths(std::int64_t b) {
  static const std::int64_t canonical[4] = {6, 12, 24, 16};
  std::vector<std::int64_t> depths;
  for (std::int64_t i = 0; i < b; ++i) depths.push_back(canonical[i]);
  return depths;
}

std::vector<std::int64_t> sub_dilations_for(Variant variant, DilationPattern pattern,
                                            std::int64_t layer) {
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(layer + 1));
  switch (variant) {
    case Variant::kTd3Net:
      for (std::int64_t i = 0; i <= layer; ++i) out.push_back(pattern_dilation(pattern, i));
      break;
    case Variant::kTd2Net:
      for (std::int64_t i = 0; i <= layer; ++i)
        out.push_back(pattern_dilation(DilationPattern::kIncreasingOdd, i));
      break;
    case Variant::kNoDilation:
      out.assign(static_cast<std::size_t>(layer + 1), 1);
      break;
    case Variant::kStandardDilation:
      // Every chunk gets the layer's maximum multi-dilation value.
      out.assign(static_cast<std::size_t>(layer + 1), pattern_dilation(pattern, layer));
      break;
    case Variant::kDenseTcn:
      throw ConfigError("dense_tcn uses plain TC layers, not multi-dilated ones");
  }
  return out;
}

namespace {

std::int64_t reduced_width(std::int64_t channels, double ratio, const std::string& where) {
  const auto out = static_cast<std::int64_t>(std::floor(static_cast<double>(channels) * ratio));
  if (out < 1)
    throw ConfigError(where + ": derived channel count " + std::to_string(out) +
                      " from " + std::to_string(channels) + " * " + std::to_string(ratio) +
                      " must be >= 1");
  return out;
}

struct Planner {
  GraphSpec g;

  std::int64_t width(int id) const { return g.nodes[static_cast<std::size_t>(id)].out_channels; }

  int add(NodeSpec n) {
    for (int in : n.inputs) n.in_widths.push_back(width(in));
    g.nodes.push_back(std::move(n));
    return static_cast<int>(g.nodes.size()) - 1;
  }

  int bottleneck(const std::string& path, std::vector<int> inputs, std::int64_t out_channels) {
    NodeSpec n;
    n.kind = NodeKind::kBottleneck;
    n.path = path;
    n.inputs = std::move(inputs);
    n.out_channels = out_channels;
    n.kernel = 1;
    return add(std::move(n));
  }

  int md_layer(const std::string& path, std::vector<int> chunks,
               std::vector<std::int64_t> dilations, std::int64_t growth, bool has_dropout) {
    NodeSpec n;
    n.kind = NodeKind::kMdLayer;
    n.path = path;
    n.inputs = std::move(chunks);
    n.out_channels = growth;
    n.kernel = 3;
    n.sub_dilations = std::move(dilations);
    n.has_dropout = has_dropout;
    return add(std::move(n));
  }

  int tc_layer(const std::string& path, std::vector<int> inputs, std::int64_t dilation,
               std::int64_t growth, bool has_dropout) {
    NodeSpec n;
    n.kind = NodeKind::kTcLayer;
    n.path = path;
    n.inputs = std::move(inputs);
    n.out_channels = growth;
    n.kernel = 3;
    n.dilation = dilation;
    n.has_dropout = has_dropout;
    return add(std::move(n));
  }

  std::int64_t stack_width(const std::vector<int>& stack) const {
    std::int64_t w = 0;
    for (int id : stack) w += width(id);
    return w;
  }
};

// TD2 block: bottleneck to bc channels, L multi-dilated layers growing the
// stack by k each, transition bottleneck to floor(L*k*t).
int plan_td2_block(Planner& p, const ModelConfig& cfg, const std::string& prefix,
                   std::vector<int> inputs, std::int64_t layers) {
  int in_bn = p.bottleneck(prefix + "/in_bn", std::move(inputs), cfg.bottleneck_width());
  std::vector<int> chunks{in_bn};
  for (std::int64_t l = 0; l < layers; ++l) {
    int md = p.md_layer(prefix + "/md." + std::to_string(l), chunks,
                        sub_dilations_for(cfg.variant, cfg.pattern, l), cfg.k,
                        cfg.dropout > 0.0);
    chunks.push_back(md);
  }
  const std::int64_t out_w =
      reduced_width(layers * cfg.k, cfg.t, prefix + "/out_bn");
  return p.bottleneck(prefix + "/out_bn", chunks, out_w);
}

}  // namespace

GraphSpec plan_network(const ModelConfig& config) {
  config.validate();
  Planner p;
  p.g.config = config;

  NodeSpec input;
  input.kind = NodeKind::kInput;
  input.path = "input";
  input.out_channels = config.in_channels;
  int running = p.add(std::move(input));

  switch (config.variant) {
    case Variant::kTd3Net:
    case Variant::kNoDilation:
    case Variant::kStandardDilation: {
      for (std::int64_t bi = 0; bi < config.b; ++bi) {
        const std::string bpath = "td3." + std::to_string(bi);
        std::vector<int> stack{running};
        for (std::int64_t nj = 0; nj < config.n; ++nj) {
          int out = plan_td2_block(p, config, bpath + "/td2." + std::to_string(nj), stack,
                                   config.l);
          stack.push_back(out);
        }
        const std::int64_t total = p.stack_width(stack);
        // The final block keeps its width: the transition exists but its
        // ratio is 1, so no channel reduction happens there.
        const std::int64_t out_w =
            bi + 1 == config.b ? total : reduced_width(total, config.c, bpath + "/compress");
        running = p.bottleneck(bpath + "/compress", stack, out_w);
      }
      break;
    }
    case Variant::kDenseTcn: {
      const auto depths = baseline_block_depths(config.b);
      for (std::int64_t bi = 0; bi < config.b; ++bi) {
        const std::string bpath = "dense." + std::to_string(bi);
        std::vector<int> stack{running};
        for (std::int64_t i = 0; i < depths[static_cast<std::size_t>(bi)]; ++i) {
          int tc = p.tc_layer(bpath + "/tc." + std::to_string(i), stack,
                              pattern_dilation(DilationPattern::kIncreasingOdd, i), config.k,
                              config.dropout > 0.0);
          stack.push_back(tc);
        }
        const std::int64_t total = p.stack_width(stack);
        const std::int64_t out_w =
            bi + 1 == config.b ? total : reduced_width(total, config.c, bpath + "/transition");
        running = p.bottleneck(bpath + "/transition", stack, out_w);
      }
      break;
    }
    case Variant::kTd2Net: {
      const auto depths = baseline_block_depths(config.b);
      for (std::int64_t bi = 0; bi < config.b; ++bi)
        running = plan_td2_block(p, config, "td2." + std::to_string(bi), {running},
                                 depths[static_cast<std::size_t>(bi)]);
      break;
    }
  }

  p.g.final_feature = running;
  NodeSpec head;
  head.kind = NodeKind::kHead;
  head.path = "head";
  head.inputs = {running};
  head.out_channels = config.num_classes;
  p.g.head = p.add(std::move(head));
  return p.g;
}

}  // namespace td3
