#include "td3net/analysis.hpp"

#include <algorithm>

namespace td3 {

namespace {

// Output set at time t of a kernel-K dilated conv reading `in` per tap,
// taps clipped to [0, T).
IndexSet conv_taps(const std::vector<IndexSet>& in, std::int64_t t, std::int64_t kernel,
                   std::int64_t dilation, PadMode pad, std::int64_t t_len) {
  IndexSet out(t_len);
  const std::int64_t anchor = detail::conv_anchor(kernel, pad);
  for (std::int64_t j = 0; j < kernel; ++j) {
    const std::int64_t src = t + (j - anchor) * dilation;
    if (src < 0 || src >= t_len) continue;
    out.merge(in[static_cast<std::size_t>(src)]);
  }
  return out;
}

std::vector<IndexSet> union_inputs(const std::vector<std::vector<IndexSet>>& inputs,
                                   std::int64_t t_len) {
  std::vector<IndexSet> out(static_cast<std::size_t>(t_len), IndexSet(t_len));
  for (const auto& in : inputs)
    for (std::int64_t t = 0; t < t_len; ++t) out[static_cast<std::size_t>(t)].merge(in[static_cast<std::size_t>(t)]);
  return out;
}

}  // namespace

std::vector<Interval> detect_blind_spots(const IndexSet& rf) {
  if (!rf.any()) throw UsageError("detect_blind_spots: empty receptive field");
  const std::int64_t n = rf.size_bits();
  std::int64_t lo = -1, hi = -1;
  for (std::int64_t i = 0; i < n; ++i)
    if (rf.test(i)) {
      if (lo < 0) lo = i;
      hi = i;
    }
  std::vector<Interval> gaps;
  std::int64_t run_start = -1;
  for (std::int64_t i = lo; i <= hi; ++i) {
    if (!rf.test(i)) {
      if (run_start < 0) run_start = i;
    } else if (run_start >= 0) {
      gaps.push_back({run_start, i - 1});
      run_start = -1;
    }
  }
  return gaps;
}

std::vector<Interval> detect_blind_spots(const std::vector<std::int64_t>& rf) {
  if (rf.empty()) throw UsageError("detect_blind_spots: empty receptive field");
  const std::int64_t max = *std::max_element(rf.begin(), rf.end());
  IndexSet set(max + 1);
  for (auto i : rf) set.set(i);
  return detect_blind_spots(set);
}

std::vector<ActivationRf> receptive_fields(const GraphSpec& spec, std::int64_t t_len) {
  if (t_len < 1) throw UsageError("receptive_fields: t_len must be >= 1");
  std::vector<ActivationRf> out;
  std::vector<std::vector<IndexSet>> node_rf(spec.nodes.size());

  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const NodeSpec& n = spec.nodes[i];
    switch (n.kind) {
      case NodeKind::kInput: {
        std::vector<IndexSet> rf(static_cast<std::size_t>(t_len), IndexSet(t_len));
        for (std::int64_t t = 0; t < t_len; ++t) rf[static_cast<std::size_t>(t)].set(t);
        node_rf[i] = std::move(rf);
        break;
      }
      case NodeKind::kBottleneck:
      case NodeKind::kTcLayer: {
        std::vector<std::vector<IndexSet>> ins;
        for (int in : n.inputs) ins.push_back(node_rf[static_cast<std::size_t>(in)]);
        const std::vector<IndexSet> merged = union_inputs(ins, t_len);
        std::vector<IndexSet> rf(static_cast<std::size_t>(t_len), IndexSet(t_len));
        for (std::int64_t t = 0; t < t_len; ++t)
          rf[static_cast<std::size_t>(t)] =
              conv_taps(merged, t, n.kernel, n.dilation, spec.config.padding, t_len);
        node_rf[i] = std::move(rf);
        break;
      }
      case NodeKind::kMdLayer: {
        std::vector<IndexSet> total(static_cast<std::size_t>(t_len), IndexSet(t_len));
        for (std::size_t ci = 0; ci < n.inputs.size(); ++ci) {
          const auto& chunk = node_rf[static_cast<std::size_t>(n.inputs[ci])];
          std::vector<IndexSet> sub(static_cast<std::size_t>(t_len), IndexSet(t_len));
          for (std::int64_t t = 0; t < t_len; ++t)
            sub[static_cast<std::size_t>(t)] = conv_taps(chunk, t, n.kernel, n.sub_dilations[ci],
                                                         spec.config.padding, t_len);
          for (std::int64_t t = 0; t < t_len; ++t)
            total[static_cast<std::size_t>(t)].merge(sub[static_cast<std::size_t>(t)]);
          out.push_back({n.path + "/sub." + std::to_string(ci), std::move(sub)});
        }
        node_rf[i] = std::move(total);
        break;
      }
      case NodeKind::kHead:
        continue;  // no temporal axis
    }
    if (n.kind != NodeKind::kInput) out.push_back({n.path, node_rf[i]});
  }
  return out;
}

RfEntry receptive_field(const GraphSpec& spec, const std::string& path, std::int64_t time,
                        std::int64_t t_len) {
  if (time < 0 || time >= t_len)
    throw UsageError("receptive_field: time index " + std::to_string(time) + " outside [0," +
                     std::to_string(t_len) + ")");
  const auto all = receptive_fields(spec, t_len);
  for (const auto& a : all) {
    if (a.path != path) continue;
    RfEntry e;
    e.path = path;
    e.time = time;
    e.field = a.per_time[static_cast<std::size_t>(time)].indices();
    e.blind_spots = detect_blind_spots(a.per_time[static_cast<std::size_t>(time)]);
    return e;
  }
  throw UsageError("unknown layer path '" + path + "'");
}

std::vector<std::int64_t> gradient_rf_oracle(const Network<double>& net, const std::string& path,
                                             std::int64_t time, std::int64_t t_len) {
  Network<double> probe = net.linearized();
  Tape<double> tape;
  Tensor<double> ones = Tensor<double>::full({1, net.spec.config.in_channels, t_len}, 1.0);
  int input = tape.leaf(std::move(ones), true, "input");
  RunOptions opts;
  opts.mode = Mode::kEval;
  opts.linearize = true;
  auto result = probe.run(tape, input, opts, false, true);
  const int act = result.activation(path);

  const Shape s = detail::as_nct(tape.value(act).shape, path);
  if (time < 0 || time >= s[2])
    throw UsageError("gradient_rf_oracle: time index outside the activation's range");
  Tensor<double> mask = Tensor<double>::zeros(tape.value(act).shape);
  const std::int64_t channels = s[1];
  for (std::int64_t c = 0; c < channels; ++c)
    mask.data[static_cast<std::size_t>(c * s[2] + time)] = 1.0;
  int loss = sum_all(tape, mul(tape, act, constant(tape, std::move(mask), "probe/mask")),
                     "probe/loss");
  tape.backward(loss);

  const Tensor<double> g = tape.grad(input);
  std::vector<std::int64_t> field;
  for (std::int64_t t = 0; t < t_len; ++t) {
    bool nonzero = false;
    for (std::int64_t c = 0; c < net.spec.config.in_channels && !nonzero; ++c)
      nonzero = g.data[static_cast<std::size_t>(c * t_len + t)] != 0.0;
    if (nonzero) field.push_back(t);
  }
  return field;
}

CostReport count_cost(const GraphSpec& spec, std::int64_t in_channels, std::int64_t t_len) {
  CostReport report;
  report.in_channels = in_channels;
  report.t_len = t_len;

  // Widths depend on in_channels; re-plan when the probe shape differs.
  const GraphSpec* g = &spec;
  GraphSpec replanned;
  if (in_channels != spec.config.in_channels) {
    ModelConfig cfg = spec.config;
    cfg.in_channels = in_channels;
    replanned = plan_network(cfg);
    g = &replanned;
  }

  for (const NodeSpec& n : g->nodes) {
    CostRow row;
    row.path = n.path;
    row.in_channels = n.in_channels_total();
    row.out_channels = n.out_channels;
    switch (n.kind) {
      case NodeKind::kInput:
        continue;
      case NodeKind::kBottleneck:
      case NodeKind::kTcLayer: {
        row.kind = n.kind == NodeKind::kBottleneck ? "bottleneck" : "tc";
        row.params = n.out_channels * row.in_channels * n.kernel + 2 * n.out_channels;
        row.buffers = 2 * n.out_channels;
        row.mac_flops = 2 * t_len * n.kernel * row.in_channels * n.out_channels;
        row.pointwise_flops = 3 * n.out_channels * t_len;  // bn scale/shift + relu
        break;
      }
      case NodeKind::kMdLayer: {
        row.kind = "md";
        for (std::size_t ci = 0; ci < n.in_widths.size(); ++ci) {
          row.params += n.out_channels * n.in_widths[ci] * n.kernel;
          row.mac_flops += 2 * t_len * n.kernel * n.in_widths[ci] * n.out_channels;
        }
        const std::int64_t bn_count =
            g->config.per_sub_bn ? static_cast<std::int64_t>(n.in_widths.size()) : 1;
        row.params += 2 * n.out_channels * bn_count;
        row.buffers = 2 * n.out_channels * bn_count;
        // sub-output summation + bn/relu
        row.pointwise_flops =
            (static_cast<std::int64_t>(n.in_widths.size()) - 1) * n.out_channels * t_len +
            3 * n.out_channels * t_len;
        break;
      }
      case NodeKind::kHead: {
        row.kind = "classifier";
        row.params = n.out_channels * row.in_channels + n.out_channels;
        row.mac_flops = 2 * row.in_channels * n.out_channels;
        row.pointwise_flops = row.in_channels * t_len;  // temporal average pooling
        report.classifier_params += row.params;
        report.classifier_mac_flops += row.mac_flops;
        report.pointwise_flops += row.pointwise_flops;
        report.rows.push_back(std::move(row));
        continue;
      }
    }
    report.backend_params += row.params;
    report.backend_buffers += row.buffers;
    report.backend_mac_flops += row.mac_flops;
    report.pointwise_flops += row.pointwise_flops;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace td3
