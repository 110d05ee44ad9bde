#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "td3net/analysis.hpp"
#include "testutil.hpp"

using namespace td3;

namespace {

// Hand-built graph: input -> stack of plain dense TC layers sharing one
// dilation, the configuration that produces lattice-structured fields.
GraphSpec dense_stack_spec(std::int64_t depth, std::int64_t dilation, std::int64_t in_channels,
                           std::int64_t growth, std::int64_t t_len) {
  ModelConfig cfg;
  cfg.in_channels = in_channels;
  cfg.num_classes = 2;
  cfg.seq_len = t_len;
  cfg.k = growth;
  GraphSpec g;
  g.config = cfg;
  NodeSpec input;
  input.kind = NodeKind::kInput;
  input.path = "input";
  input.out_channels = in_channels;
  g.nodes.push_back(input);
  std::vector<int> stack{0};
  for (std::int64_t i = 0; i < depth; ++i) {
    NodeSpec tc;
    tc.kind = NodeKind::kTcLayer;
    tc.path = "tc." + std::to_string(i);
    tc.inputs = stack;
    for (int id : stack) tc.in_widths.push_back(g.nodes[static_cast<std::size_t>(id)].out_channels);
    tc.out_channels = growth;
    tc.kernel = 3;
    tc.dilation = dilation;
    g.nodes.push_back(tc);
    stack.push_back(static_cast<int>(g.nodes.size()) - 1);
  }
  g.final_feature = static_cast<int>(g.nodes.size()) - 1;
  NodeSpec head;
  head.kind = NodeKind::kHead;
  head.path = "head";
  head.inputs = {g.final_feature};
  head.in_widths = {growth};
  head.out_channels = cfg.num_classes;
  g.nodes.push_back(head);
  g.head = static_cast<int>(g.nodes.size()) - 1;
  return g;
}

const ActivationRf& find_rf(const std::vector<ActivationRf>& rfs, const std::string& path) {
  for (const auto& a : rfs)
    if (a.path == path) return a;
  throw UsageError("missing path " + path);
}

ModelConfig tiny_td3(Variant v = Variant::kTd3Net) {
  ModelConfig cfg;
  cfg.b = 2;
  cfg.n = 2;
  cfg.l = 3;
  cfg.k = 8;
  cfg.c = cfg.t = 0.5;
  cfg.variant = v;
  cfg.in_channels = 16;
  cfg.num_classes = 10;
  cfg.seq_len = 29;
  return cfg;
}

}  // namespace

TEST_CASE("single TC layer field is one kernel application") {
  const GraphSpec g = dense_stack_spec(1, 1, 2, 2, 10);
  RfEntry e = receptive_field(g, "tc.0", 5, 10);
  CHECK(e.field == std::vector<std::int64_t>{4, 5, 6});
  CHECK(e.blind_spots.empty());

  RfEntry edge = receptive_field(g, "tc.0", 0, 10);
  CHECK(edge.field == std::vector<std::int64_t>{0, 1});  // clipped at the boundary

  CHECK_THROWS_AS(receptive_field(g, "tc.0", 10, 10), UsageError);
  CHECK_THROWS_AS(receptive_field(g, "nope", 0, 10), UsageError);
}

TEST_CASE("detect_blind_spots basics") {
  CHECK(detect_blind_spots(std::vector<std::int64_t>{3, 4, 5}).empty());
  const auto gaps = detect_blind_spots(std::vector<std::int64_t>{0, 4, 8});
  REQUIRE(gaps.size() == 2);
  CHECK(gaps[0] == Interval{1, 3});
  CHECK(gaps[1] == Interval{5, 7});
  CHECK_THROWS_AS(detect_blind_spots(std::vector<std::int64_t>{}), UsageError);
}

TEST_CASE("a fixed-dilation dense stack has blind spots whose sizes add up") {
  const std::int64_t t_len = 29;
  const GraphSpec g = dense_stack_spec(3, 4, 2, 2, t_len);
  const auto rfs = receptive_fields(g, t_len);
  const auto& layer3 = find_rf(rfs, "tc.2");
  const auto& field = layer3.per_time[14];  // center activation
  const auto idx = field.indices();
  const auto gaps = detect_blind_spots(field);
  CHECK(!gaps.empty());
  // everything lives on the dilation-4 lattice around t=14
  for (auto i : idx) CHECK((14 - i) % 4 == 0);
  std::int64_t gap_total = 0;
  for (const auto& gv : gaps) gap_total += gv.hi - gv.lo + 1;
  CHECK(gap_total == (idx.back() - idx.front() + 1) - static_cast<std::int64_t>(idx.size()));
}

TEST_CASE("gradient oracle reads a single dilated conv directly") {
  const GraphSpec g = dense_stack_spec(1, 2, 2, 2, 29);
  Network<double> net(g);
  net.init_params(1);
  CHECK(gradient_rf_oracle(net, "tc.0", 10, 29) == std::vector<std::int64_t>{8, 10, 12});
  // clipping at the left edge
  CHECK(gradient_rf_oracle(net, "tc.0", 0, 29) == std::vector<std::int64_t>{0, 2});
}

TEST_CASE("symbolic receptive fields match the gradient oracle") {
  for (Variant v : {Variant::kTd3Net, Variant::kStandardDilation}) {
    ModelConfig cfg = tiny_td3(v);
    cfg.b = 1;
    cfg.n = 1;
    const GraphSpec g = plan_network(cfg);
    Network<double> net(g);
    net.init_params(2);
    const auto rfs = receptive_fields(g, cfg.seq_len);
    // spot-check a spread of activations and times
    for (std::size_t ai = 0; ai < rfs.size(); ai += 3)
      for (std::int64_t t : {0L, 13L, 28L}) {
        const auto want = rfs[ai].per_time[static_cast<std::size_t>(t)].indices();
        CHECK(gradient_rf_oracle(net, rfs[ai].path, t, cfg.seq_len) == want);
      }
  }
}

TEST_CASE("multi-dilated blocks keep every output field contiguous") {
  ModelConfig cfg = tiny_td3();
  cfg.b = 1;
  cfg.n = 1;
  const GraphSpec g = plan_network(cfg);
  for (const auto& a : receptive_fields(g, cfg.seq_len))
    for (const auto& set : a.per_time) CHECK(detect_blind_spots(set).empty());
}

TEST_CASE("field growth is monotone along the graph") {
  // Every node's field at t contains the fused input field at the anchored
  // tap, which is itself the field of one activation it reads.
  ModelConfig cfg = tiny_td3();
  const GraphSpec g = plan_network(cfg);
  const auto rfs = receptive_fields(g, cfg.seq_len);
  auto rf_of = [&](const std::string& path) -> const ActivationRf& { return find_rf(rfs, path); };
  for (const auto& n : g.nodes) {
    if (n.kind == NodeKind::kInput || n.kind == NodeKind::kHead) continue;
    const auto& mine = rf_of(n.path);
    for (std::int64_t t = 0; t < cfg.seq_len; ++t) {
      bool superset_of_someone = false;
      for (int in : n.inputs) {
        const NodeSpec& src = g.node(in);
        if (src.kind == NodeKind::kInput) {
          superset_of_someone = superset_of_someone || mine.per_time[static_cast<std::size_t>(t)].test(t);
          continue;
        }
        IndexSet merged = rf_of(src.path).per_time[static_cast<std::size_t>(t)];
        bool contains = true;
        for (std::int64_t i = 0; i < cfg.seq_len && contains; ++i)
          if (merged.test(i) && !mine.per_time[static_cast<std::size_t>(t)].test(i)) contains = false;
        superset_of_someone = superset_of_someone || contains;
      }
      CHECK(superset_of_someone);
    }
  }
}

TEST_CASE("parameter arithmetic for single layers") {
  const GraphSpec g = dense_stack_spec(1, 1, 2, 3, 4);
  const CostReport report = count_cost(g, 2, 4);
  REQUIRE(report.rows.size() == 2);  // tc + classifier
  const CostRow& tc = report.rows[0];
  CHECK(tc.params - 2 * tc.out_channels == 18);  // 2*3*3 conv weights, bn affine on top
  CHECK(tc.buffers == 6);
  // one conv, C_in=2 -> FLOPs 2*T*K*Cin*Cout with T=4: 2*4*3*2*3
  CHECK(tc.mac_flops == 144);

  const GraphSpec g1 = dense_stack_spec(1, 1, 1, 1, 4);
  CHECK(count_cost(g1, 1, 4).rows[0].mac_flops == 24);  // 2*4*3
}

TEST_CASE("toy network cost matches the hand-computed closed form") {
  ModelConfig cfg;
  cfg.b = cfg.n = cfg.l = cfg.k = 1;
  cfg.c = cfg.t = 1.0;
  cfg.in_channels = 8;
  cfg.num_classes = 3;
  cfg.seq_len = 4;
  const GraphSpec g = plan_network(cfg);
  const CostReport report = count_cost(g);
  // in_bn: 4*8 conv + 8 bn; md.0: 1*4*3 conv + 2 bn; out_bn: 1*5 conv + 2 bn;
  // compress (ratio 1): 9*9 conv + 18 bn
  CHECK(report.backend_params == (32 + 8) + (12 + 2) + (5 + 2) + (81 + 18));
  CHECK(report.classifier_params == 9 * 3 + 3);
  // conv MACs*2 at T=4: in_bn 2*4*1*8*4, md 2*4*3*4*1, out_bn 2*4*1*5*1, compress 2*4*1*9*9
  CHECK(report.backend_mac_flops == 256 + 96 + 40 + 648);
  CHECK(report.classifier_mac_flops == 2 * 9 * 3);
}

TEST_CASE("analytic count equals the parameter registry exactly") {
  for (Variant v : {Variant::kTd3Net, Variant::kDenseTcn, Variant::kTd2Net,
                    Variant::kStandardDilation}) {
    ModelConfig cfg = tiny_td3(v);
    const GraphSpec g = plan_network(cfg);
    Network<double> net(g);
    std::int64_t registry = 0;
    for (auto& ref : net.param_registry()) registry += ref.tensor->numel();
    std::int64_t buffers = 0;
    for (auto& ref : net.buffer_registry()) buffers += ref.tensor->numel();
    const CostReport report = count_cost(g);
    CHECK(report.total_params() == registry);
    CHECK(report.backend_buffers == buffers);
  }
}

TEST_CASE("count_cost re-plans when the probe width differs") {
  ModelConfig cfg = tiny_td3();
  const GraphSpec g = plan_network(cfg);
  const CostReport a = count_cost(g, 16, 29);
  const CostReport b = count_cost(g, 32, 29);
  CHECK(b.backend_params > a.backend_params);
}

TEST_CASE("activation map: zeros in, zeros out, length T") {
  ModelConfig cfg = tiny_td3();
  Network<double> net = build_network<double>(cfg, 3);
  Tensor<double> zeros = Tensor<double>::zeros({2, 16, 29});
  Tensor<double> map = activation_map(net, zeros);
  CHECK(map.shape == Shape{2, 29});
  for (double v : map.data) CHECK(v == 0.0);
}

TEST_CASE("activation map scales linearly with the final feature") {
  // A head-only graph makes the final feature the input itself.
  GraphSpec g = dense_stack_spec(0, 1, 3, 3, 7);
  Network<double> net(g);
  net.init_params(1);
  std::mt19937_64 rng(5);
  Tensor<double> x = testutil::random_tensor({1, 3, 7}, rng);
  Tensor<double> doubled = x;
  for (double& v : doubled.data) v *= 2.0;
  const Tensor<double> m1 = activation_map(net, x);
  const Tensor<double> m2 = activation_map(net, doubled);
  for (std::size_t i = 0; i < m1.data.size(); ++i)
    CHECK(m2.data[i] == doctest::Approx(2.0 * m1.data[i]).epsilon(1e-12));
}
