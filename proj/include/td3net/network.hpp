#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "td3net/graph.hpp"
#include "td3net/layers.hpp"
#include "td3net/rng.hpp"

namespace td3 {

template <typename S>
struct HeadLayer {
  Tensor<S> weight;  // [num_classes, C]
  Tensor<S> bias;    // [num_classes]

  int forward(ForwardCtx<S>& ctx, int x, const std::string& path) {
    int pooled = global_avg_pool_time(ctx.tape, x, path + "/pool");
    ctx.record(path + "/pool", pooled);
    int w = ctx.take(path + "/linear/w", weight);
    int b = ctx.take(path + "/linear/b", bias);
    return linear(ctx.tape, pooled, w, b, path + "/linear");
  }
};

template <typename S>
struct ParamRef {
  std::string name;
  Tensor<S>* tensor;
};

template <typename S>
struct ForwardResult {
  int logits = -1;
  int final_feature = -1;
  // Leased parameter leaves, in registry order.
  std::vector<std::pair<std::string, int>> param_leaves;
  // Activation ids by path when recording was requested.
  std::vector<std::pair<std::string, int>> activations;

  int activation(const std::string& path) const {
    for (const auto& [p, id] : activations)
      if (p == path) return id;
    throw UsageError("unknown layer path '" + path + "'");
  }
};

// A built network: architecture metadata plus parameter storage. Building
// is a pure function of (config, seed); the parameter registry walks
// tensors in build order, so two builds agree bit for bit.
template <typename S>
class Network {
 public:
  using LayerSlot = std::variant<std::monostate, BottleneckLayer<S>, TcLayer<S>,
                                 MultiDilatedLayer<S>, HeadLayer<S>>;

  GraphSpec spec;

  explicit Network(GraphSpec s) : spec(std::move(s)) {
    layers_.resize(spec.nodes.size());
    for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
      const NodeSpec& n = spec.nodes[i];
      switch (n.kind) {
        case NodeKind::kInput:
          break;
        case NodeKind::kBottleneck: {
          BottleneckLayer<S> l;
          l.weight = Tensor<S>::zeros({n.out_channels, n.in_channels_total(), 1});
          l.bn = BnParams<S>::init(n.out_channels);
          layers_[i] = std::move(l);
          break;
        }
        case NodeKind::kTcLayer: {
          TcLayer<S> l;
          l.weight = Tensor<S>::zeros({n.out_channels, n.in_channels_total(), n.kernel});
          l.bn = BnParams<S>::init(n.out_channels);
          l.dilation = n.dilation;
          l.pad = spec.config.padding;
          l.dropout_p = n.has_dropout ? spec.config.dropout : 0.0;
          layers_[i] = std::move(l);
          break;
        }
        case NodeKind::kMdLayer: {
          MultiDilatedLayer<S> l;
          for (std::size_t ci = 0; ci < n.in_widths.size(); ++ci)
            l.sub_weights.push_back(Tensor<S>::zeros({n.out_channels, n.in_widths[ci], n.kernel}));
          l.sub_dilations = n.sub_dilations;
          l.bn = BnParams<S>::init(n.out_channels);
          l.per_sub_bn = spec.config.per_sub_bn;
          if (l.per_sub_bn)
            for (std::size_t ci = 0; ci < n.in_widths.size(); ++ci)
              l.sub_bn.push_back(BnParams<S>::init(n.out_channels));
          l.pad = spec.config.padding;
          l.dropout_p = n.has_dropout ? spec.config.dropout : 0.0;
          layers_[i] = std::move(l);
          break;
        }
        case NodeKind::kHead: {
          HeadLayer<S> l;
          l.weight = Tensor<S>::zeros({n.out_channels, n.in_widths[0]});
          l.bias = Tensor<S>::zeros({n.out_channels});
          layers_[i] = std::move(l);
          break;
        }
      }
    }
  }

  // Fan-in scaled normal init for conv/linear weights, gamma 1, beta 0.
  void init_params(std::uint64_t seed) {
    auto stream = make_stream(seed, "init");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& ref : param_registry()) {
      Tensor<S>& t = *ref.tensor;
      const bool is_weight = ref.name.size() >= 2 && ref.name.rfind("/w") == ref.name.size() - 2;
      if (!is_weight) continue;  // gamma/beta/bias keep their deterministic init
      std::int64_t fan_in = 1;
      for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (S& v : t.data) v = static_cast<S>(normal(stream) * std_dev);
    }
  }

  std::vector<ParamRef<S>> param_registry() {
    std::vector<ParamRef<S>> refs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string& path = spec.nodes[i].path;
      if (auto* b = std::get_if<BottleneckLayer<S>>(&layers_[i])) {
        refs.push_back({path + "/w", &b->weight});
        refs.push_back({path + "/bn.gamma", &b->bn.gamma});
        refs.push_back({path + "/bn.beta", &b->bn.beta});
      } else if (auto* t = std::get_if<TcLayer<S>>(&layers_[i])) {
        refs.push_back({path + "/w", &t->weight});
        refs.push_back({path + "/bn.gamma", &t->bn.gamma});
        refs.push_back({path + "/bn.beta", &t->bn.beta});
      } else if (auto* m = std::get_if<MultiDilatedLayer<S>>(&layers_[i])) {
        for (std::size_t si = 0; si < m->sub_weights.size(); ++si) {
          const std::string sub = path + "/sub." + std::to_string(si);
          refs.push_back({sub + "/w", &m->sub_weights[si]});
          if (m->per_sub_bn) {
            refs.push_back({sub + "/bn.gamma", &m->sub_bn[si].gamma});
            refs.push_back({sub + "/bn.beta", &m->sub_bn[si].beta});
          }
        }
        if (!m->per_sub_bn) {
          refs.push_back({path + "/bn.gamma", &m->bn.gamma});
          refs.push_back({path + "/bn.beta", &m->bn.beta});
        }
      } else if (auto* h = std::get_if<HeadLayer<S>>(&layers_[i])) {
        refs.push_back({path + "/linear/w", &h->weight});
        refs.push_back({path + "/linear/b", &h->bias});
      }
    }
    return refs;
  }

  std::vector<ParamRef<S>> buffer_registry() {
    std::vector<ParamRef<S>> refs;
    auto add_bn = [&refs](const std::string& path, BnParams<S>& bn) {
      refs.push_back({path + "/bn.running_mean", &bn.running.mean});
      refs.push_back({path + "/bn.running_var", &bn.running.var});
    };
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string& path = spec.nodes[i].path;
      if (auto* b = std::get_if<BottleneckLayer<S>>(&layers_[i])) {
        add_bn(path, b->bn);
      } else if (auto* t = std::get_if<TcLayer<S>>(&layers_[i])) {
        add_bn(path, t->bn);
      } else if (auto* m = std::get_if<MultiDilatedLayer<S>>(&layers_[i])) {
        if (m->per_sub_bn)
          for (std::size_t si = 0; si < m->sub_bn.size(); ++si)
            add_bn(path + "/sub." + std::to_string(si), m->sub_bn[si]);
        else
          add_bn(path, m->bn);
      }
    }
    return refs;
  }

  // Runs the graph on an already-taped input node. Records every node
  // output (and multi-dilated sub outputs) by path when asked to.
  ForwardResult<S> run(Tape<S>& tape, int input_id, const RunOptions& opts,
                       bool lease_params = true, bool record = false) {
    ForwardCtx<S> ctx{tape, opts, nullptr, nullptr};
    ParamLease<S> lease;
    std::vector<std::pair<std::string, int>> records;
    if (lease_params) ctx.lease = &lease;
    if (record) ctx.recorder = &records;

    std::vector<int> value(spec.nodes.size(), -1);
    ForwardResult<S> result;
    for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
      const NodeSpec& n = spec.nodes[i];
      int out = -1;
      switch (n.kind) {
        case NodeKind::kInput:
          out = input_id;
          break;
        case NodeKind::kBottleneck: {
          int x = gather(tape, value, n);
          out = std::get<BottleneckLayer<S>>(layers_[i]).forward(ctx, x, n.path);
          break;
        }
        case NodeKind::kTcLayer: {
          int x = gather(tape, value, n);
          out = std::get<TcLayer<S>>(layers_[i]).forward(ctx, x, n.path);
          break;
        }
        case NodeKind::kMdLayer: {
          std::vector<int> chunks;
          for (int in : n.inputs) chunks.push_back(value[static_cast<std::size_t>(in)]);
          out = std::get<MultiDilatedLayer<S>>(layers_[i]).forward_chunks(ctx, chunks, n.path);
          break;
        }
        case NodeKind::kHead: {
          out = std::get<HeadLayer<S>>(layers_[i]).forward(
              ctx, value[static_cast<std::size_t>(n.inputs[0])], n.path);
          break;
        }
      }
      value[i] = out;
      ctx.record(n.path, out);
      if (static_cast<int>(i) == spec.final_feature) result.final_feature = out;
    }
    result.logits = value[static_cast<std::size_t>(spec.head)];
    for (auto& e : lease.entries) result.param_leaves.emplace_back(std::move(e.name), e.leaf);
    result.activations = std::move(records);
    return result;
  }

  // Convenience wrapper taking raw features [C,T] or [N,C,T].
  ForwardResult<S> forward(Tape<S>& tape, const Tensor<S>& features, const RunOptions& opts,
                           bool lease_params = true, bool record = false) {
    int input_id = constant(tape, features, "input");
    return run(tape, input_id, opts, lease_params, record);
  }

  // Connectivity probe: same wiring, every conv weight replaced by the
  // all-positive constant 1/fan_in so that forward magnitudes and
  // gradients stay O(1) and cannot cancel.
  Network linearized() const {
    Network copy(*this);
    for (auto& ref : copy.param_registry()) {
      if (ref.name.rfind("/w") != ref.name.size() - 2) continue;
      Tensor<S>& t = *ref.tensor;
      std::int64_t fan_in = 1;
      for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
      const S v = static_cast<S>(1.0 / static_cast<double>(fan_in));
      for (S& x : t.data) x = v;
    }
    return copy;
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out(spec);
    auto src = const_cast<Network*>(this)->param_registry();
    auto dst = out.param_registry();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<U>();
    auto sb = const_cast<Network*>(this)->buffer_registry();
    auto db = out.buffer_registry();
    for (std::size_t i = 0; i < sb.size(); ++i) *db[i].tensor = sb[i].tensor->template cast<U>();
    return out;
  }

 private:
  int gather(Tape<S>& tape, const std::vector<int>& value, const NodeSpec& n) {
    std::vector<int> ins;
    for (int in : n.inputs) ins.push_back(value[static_cast<std::size_t>(in)]);
    return concat_channels(tape, ins, n.path + "/concat");
  }

  std::vector<LayerSlot> layers_;
};

template <typename S>
Network<S> build_network(const ModelConfig& config, std::uint64_t seed) {
  Network<S> net(plan_network(config));
  net.init_params(seed);
  return net;
}

}  // namespace td3
