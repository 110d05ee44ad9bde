#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "td3net/analysis.hpp"
#include "td3net/network.hpp"
#include "testutil.hpp"

using namespace td3;

namespace {

ModelConfig tiny_config(Variant variant = Variant::kTd3Net) {
  ModelConfig cfg;
  cfg.b = 2;
  cfg.n = 2;
  cfg.l = 3;
  cfg.k = 8;
  cfg.c = cfg.t = 0.5;
  cfg.pattern = DilationPattern::kExponential;
  cfg.variant = variant;
  cfg.in_channels = 512;
  cfg.num_classes = 10;
  cfg.seq_len = 29;
  return cfg;
}

ModelConfig base_config() {
  ModelConfig cfg;
  cfg.b = 4;
  cfg.n = 10;
  cfg.l = 5;
  cfg.k = 36;
  cfg.c = cfg.t = 0.5;
  cfg.bc = 144;
  cfg.in_channels = 512;
  cfg.num_classes = 500;
  cfg.seq_len = 29;
  return cfg;
}

}  // namespace

TEST_CASE("base configuration builds with the documented widths") {
  const GraphSpec g = plan_network(base_config());
  const int out_bn = g.find("td3.0/td2.0/out_bn");
  REQUIRE(out_bn >= 0);
  CHECK(g.node(out_bn).out_channels == 90);  // floor(5 * 36 * 0.5)
  CHECK(g.node(g.find("td3.0/td2.0/in_bn")).out_channels == 144);
  // dense stacking: td2.1 sees the block input plus td2.0's output
  const int in_bn1 = g.find("td3.0/td2.1/in_bn");
  CHECK(g.node(in_bn1).in_channels_total() == 512 + 90);
  // first compression halves 512 + 10*90 channels
  CHECK(g.node(g.find("td3.0/compress")).out_channels == (512 + 900) / 2);
  // the last block's transition keeps its width
  const int last = g.find("td3.3/compress");
  CHECK(g.node(last).out_channels == g.node(last).in_channels_total());
}

TEST_CASE("minimal configuration builds one bottleneck, one md layer, one transition") {
  ModelConfig cfg;
  cfg.b = cfg.n = cfg.l = 1;
  cfg.k = 2;
  cfg.c = cfg.t = 1.0;
  cfg.in_channels = 4;
  cfg.num_classes = 3;
  cfg.seq_len = 8;
  const GraphSpec g = plan_network(cfg);
  std::vector<std::string> paths;
  for (const auto& n : g.nodes) paths.push_back(n.path);
  CHECK(paths == std::vector<std::string>{"input", "td3.0/td2.0/in_bn", "td3.0/td2.0/md.0",
                                          "td3.0/td2.0/out_bn", "td3.0/compress", "head"});
  CHECK(g.node(g.find("td3.0/td2.0/md.0")).sub_dilations == std::vector<std::int64_t>{1});
}

TEST_CASE("dense_tcn builds four blocks of depths 6/12/24/16 with the odd ladder") {
  ModelConfig cfg = tiny_config(Variant::kDenseTcn);
  cfg.b = 4;
  const GraphSpec g = plan_network(cfg);
  CHECK(g.find("dense.0/tc.5") >= 0);
  CHECK(g.find("dense.0/tc.6") < 0);
  CHECK(g.find("dense.1/tc.11") >= 0);
  CHECK(g.find("dense.2/tc.23") >= 0);
  CHECK(g.find("dense.3/tc.15") >= 0);
  CHECK(g.node(g.find("dense.0/tc.0")).dilation == 1);
  CHECK(g.node(g.find("dense.0/tc.3")).dilation == 7);
  CHECK(g.node(g.find("dense.1/tc.8")).dilation == 1);   // 2*(8 mod 8)+1 wraps
  CHECK(g.node(g.find("dense.1/tc.11")).dilation == 7);
  // dense within a block: tc.2 consumes block input plus two growths
  const auto& tc2 = g.node(g.find("dense.0/tc.2"));
  CHECK(tc2.in_channels_total() == 512 + 2 * cfg.k);
}

TEST_CASE("td2net builds sequential TD2 blocks with the odd ladder") {
  ModelConfig cfg = tiny_config(Variant::kTd2Net);
  cfg.b = 2;
  const GraphSpec g = plan_network(cfg);
  CHECK(g.find("td2.0/md.5") >= 0);   // depth 6
  CHECK(g.find("td2.1/md.11") >= 0);  // depth 12
  CHECK(g.node(g.find("td2.0/md.2")).sub_dilations == std::vector<std::int64_t>{1, 3, 5});
  // no dense connection across blocks: td2.1 reads only td2.0's output
  const auto& in1 = g.node(g.find("td2.1/in_bn"));
  CHECK(in1.inputs.size() == 1);
  CHECK(g.node(in1.inputs[0]).path == "td2.0/out_bn");
}

TEST_CASE("ablation variants rewire dilations only") {
  ModelConfig no_dil = tiny_config(Variant::kNoDilation);
  no_dil.l = 5;
  const GraphSpec a = plan_network(no_dil);
  for (const auto& n : a.nodes)
    if (n.kind == NodeKind::kMdLayer)
      for (auto d : n.sub_dilations) CHECK(d == 1);

  ModelConfig std_dil = tiny_config(Variant::kStandardDilation);
  std_dil.l = 5;
  const GraphSpec b = plan_network(std_dil);
  CHECK(b.node(b.find("td3.0/td2.0/md.3")).sub_dilations ==
        std::vector<std::int64_t>{8, 8, 8, 8});

  ModelConfig multi = tiny_config(Variant::kTd3Net);
  multi.l = 5;
  const GraphSpec c = plan_network(multi);
  CHECK(c.node(c.find("td3.0/td2.0/md.3")).sub_dilations ==
        std::vector<std::int64_t>{1, 2, 4, 8});

  // identical parameter budgets: the three variants differ only in dilation
  const auto ca = count_cost(a), cb = count_cost(b), cc = count_cost(c);
  CHECK(ca.total_params() == cb.total_params());
  CHECK(cb.total_params() == cc.total_params());
}

TEST_CASE("derived channel counts below one are configuration errors") {
  ModelConfig cfg = tiny_config();
  cfg.l = 1;
  cfg.k = 1;
  cfg.t = 0.4;  // floor(1 * 1 * 0.4) = 0
  CHECK_THROWS_AS(plan_network(cfg), ConfigError);
}

TEST_CASE("identical inputs in a batch produce identical logits") {
  ModelConfig cfg = tiny_config();
  cfg.in_channels = 16;
  Network<double> net = build_network<double>(cfg, 3);
  Tensor<double> zeros = Tensor<double>::zeros({4, 16, 29});
  Tape<double> tape;
  RunOptions opts;
  auto fwd = net.forward(tape, zeros, opts, false, false);
  const Tensor<double>& logits = tape.value(fwd.logits);
  for (std::int64_t n = 1; n < 4; ++n)
    for (std::int64_t c = 0; c < 10; ++c) CHECK(logits.at2(n, c) == logits.at2(0, c));
}

TEST_CASE("logits are finite and softmax-normalized on random input") {
  std::mt19937_64 rng(7);
  ModelConfig cfg = tiny_config();
  Network<double> net = build_network<double>(cfg, 11);
  Tensor<double> x = testutil::random_tensor({1, 512, 29}, rng);
  Tape<double> tape;
  RunOptions opts;
  auto fwd = net.forward(tape, x, opts, false, false);
  int probs = softmax(tape, fwd.logits);
  double sum = 0;
  for (double v : tape.value(probs).data) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("building twice from one seed is bitwise deterministic") {
  ModelConfig cfg = tiny_config();
  cfg.in_channels = 32;
  Network<double> a = build_network<double>(cfg, 42);
  Network<double> b = build_network<double>(cfg, 42);
  auto ra = a.param_registry(), rb = b.param_registry();
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].name == rb[i].name);
    CHECK(ra[i].tensor->data == rb[i].tensor->data);
  }

  std::mt19937_64 rng(9);
  Tensor<double> x = testutil::random_tensor({1, 32, 29}, rng);
  auto run = [&x](Network<double>& net) {
    Tape<double> tape;
    RunOptions opts;
    return tape.value(net.forward(tape, x, opts, false, false).logits).data;
  };
  CHECK(run(a) == run(b));

  Network<double> c = build_network<double>(cfg, 43);
  CHECK(run(a) != run(c));
}

TEST_CASE("channel bookkeeping matches a probe forward pass") {
  for (Variant v : {Variant::kTd3Net, Variant::kDenseTcn, Variant::kTd2Net}) {
    ModelConfig cfg = tiny_config(v);
    cfg.in_channels = 24;
    Network<double> net = build_network<double>(cfg, 5);
    CHECK_NOTHROW(verify_channel_bookkeeping(net, cfg.seq_len));
  }
}

TEST_CASE("forward accepts any temporal length") {
  ModelConfig cfg = tiny_config();
  cfg.in_channels = 8;
  Network<double> net = build_network<double>(cfg, 1);
  for (std::int64_t t_len : {1, 7, 64}) {
    Tape<double> tape;
    RunOptions opts;
    auto fwd = net.forward(tape, Tensor<double>::full({1, 8, t_len}, 0.5), opts, false, false);
    CHECK(tape.value(fwd.logits).shape == Shape{1, 10});
  }
}

TEST_CASE("feature width mismatch is a configuration error") {
  ModelConfig cfg = tiny_config();
  cfg.in_channels = 8;
  Network<double> net = build_network<double>(cfg, 1);
  Tape<double> tape;
  RunOptions opts;
  CHECK_THROWS_AS(net.forward(tape, Tensor<double>::zeros({1, 9, 29}), opts, false, false),
                  ConfigError);
}
