#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "td3net/layers.hpp"
#include "td3net/rng.hpp"
#include "testutil.hpp"

using namespace td3;
using testutil::conv1d_reference;
using testutil::random_tensor;

namespace {

TcLayer<double> make_tc(std::int64_t cin, std::int64_t cout, std::int64_t dilation,
                        double dropout_p, std::mt19937_64& rng) {
  TcLayer<double> l;
  l.weight = random_tensor({cout, cin, 3}, rng, 0.5);
  l.bn = BnParams<double>::init(cout);
  l.dilation = dilation;
  l.dropout_p = dropout_p;
  return l;
}

MultiDilatedLayer<double> make_md(std::int64_t bc, std::int64_t k, std::int64_t layer,
                                  DilationPattern pattern, std::mt19937_64& rng) {
  MultiDilatedLayer<double> l;
  l.sub_weights.push_back(random_tensor({k, bc, 3}, rng, 0.5));
  for (std::int64_t i = 1; i <= layer; ++i)
    l.sub_weights.push_back(random_tensor({k, k, 3}, rng, 0.5));
  for (std::int64_t i = 0; i <= layer; ++i) l.sub_dilations.push_back(pattern_dilation(pattern, i));
  l.bn = BnParams<double>::init(k);
  return l;
}

}  // namespace

TEST_CASE("dilation ladders") {
  CHECK(pattern_dilation(DilationPattern::kExponential, 0) == 1);
  CHECK(pattern_dilation(DilationPattern::kExponential, 4) == 16);
  CHECK(pattern_dilation(DilationPattern::kLinear, 0) == 1);  // 2*0 is not a valid dilation
  CHECK(pattern_dilation(DilationPattern::kLinear, 1) == 2);
  CHECK(pattern_dilation(DilationPattern::kLinear, 5) == 10);
  CHECK(pattern_dilation(DilationPattern::kIncreasingOdd, 0) == 1);
  CHECK(pattern_dilation(DilationPattern::kIncreasingOdd, 7) == 15);
  CHECK(pattern_dilation(DilationPattern::kIncreasingOdd, 8) == 1);  // wraps
}

TEST_CASE("tc_forward with identity BN state equals the raw convolution at eval") {
  std::mt19937_64 rng(1);
  TcLayer<double> layer = make_tc(2, 3, 2, 0.0, rng);
  for (double& v : layer.weight.data) v = std::abs(v);  // keep conv output non-negative
  Tensor<double> x = random_tensor({2, 15}, rng);
  for (double& v : x.data) v = std::abs(v);

  Tape<double> tape;
  ForwardCtx<double> ctx{tape, RunOptions{Mode::kEval, false, false, nullptr}, nullptr, nullptr};
  int y = layer.forward(ctx, constant(tape, x), "tc");
  const Tensor<double> ref = conv1d_reference(x, layer.weight, 2, PadMode::kSame);
  for (std::size_t i = 0; i < ref.data.size(); ++i)
    CHECK(tape.value(y).data[i] == doctest::Approx(ref.data[i]).epsilon(1e-4));
}

TEST_CASE("dropout probability does not matter at eval") {
  std::mt19937_64 rng(2);
  TcLayer<double> a = make_tc(3, 4, 1, 0.2, rng);
  TcLayer<double> b = a;
  b.dropout_p = 0.0;
  Tensor<double> x = random_tensor({3, 20}, rng);
  auto run = [&x](TcLayer<double>& l) {
    Tape<double> tape;
    ForwardCtx<double> ctx{tape, RunOptions{Mode::kEval, false, false, nullptr}, nullptr, nullptr};
    return tape.value(l.forward(ctx, constant(tape, x), "tc")).data;
  };
  CHECK(run(a) == run(b));
}

TEST_CASE("train-mode forward is bitwise reproducible under a fixed seed") {
  std::mt19937_64 rng(3);
  TcLayer<double> proto = make_tc(3, 4, 2, 0.3, rng);
  Tensor<double> x = random_tensor({3, 20}, rng);
  auto run = [&]() {
    TcLayer<double> layer = proto;  // fresh BN state per run
    std::mt19937_64 stream = make_stream(17, "dropout");
    Tape<double> tape;
    ForwardCtx<double> ctx{tape, RunOptions{Mode::kTrain, true, false, &stream}, nullptr, nullptr};
    return tape.value(layer.forward(ctx, constant(tape, x), "tc")).data;
  };
  CHECK(run() == run());
}

TEST_CASE("md_forward at layer 0 degenerates to a dilation-1 tc layer") {
  std::mt19937_64 rng(4);
  MultiDilatedLayer<double> md = make_md(5, 4, 0, DilationPattern::kExponential, rng);
  TcLayer<double> tc;
  tc.weight = md.sub_weights[0];
  tc.bn = BnParams<double>::init(4);
  tc.dilation = 1;
  Tensor<double> x = random_tensor({5, 13}, rng);
  auto run = [&x](auto& layer) {
    Tape<double> tape;
    ForwardCtx<double> ctx{tape, RunOptions{Mode::kEval, false, false, nullptr}, nullptr, nullptr};
    return tape.value(layer.forward(ctx, constant(tape, x), "l")).data;
  };
  CHECK(run(md) == run(tc));
}

TEST_CASE("md_forward sums identity-kernel chunks element-wise") {
  // bc == k so every chunk has the same width and the identity tap is square.
  const std::int64_t k = 3;
  MultiDilatedLayer<double> md;
  for (int i = 0; i < 3; ++i) {
    Tensor<double> w = Tensor<double>::zeros({k, k, 3});
    for (std::int64_t c = 0; c < k; ++c) w.at3(c, c, 1) = 1.0;
    md.sub_weights.push_back(w);
  }
  md.sub_dilations = {1, 2, 4};
  md.bn = BnParams<double>::init(k);

  std::mt19937_64 rng(5);
  Tensor<double> x = random_tensor({3 * k, 11}, rng);
  Tape<double> tape;
  ForwardCtx<double> ctx{tape, RunOptions{Mode::kEval, false, true, nullptr}, nullptr, nullptr};
  int y = md.forward(ctx, constant(tape, x), "md");
  for (std::int64_t c = 0; c < k; ++c)
    for (std::int64_t t = 0; t < 11; ++t)
      CHECK(tape.value(y).at2(c, t) ==
            doctest::Approx(x.at2(c, t) + x.at2(k + c, t) + x.at2(2 * k + c, t)).epsilon(1e-12));
}

TEST_CASE("layer 4 with the exponential pattern uses dilations 1,2,4,8,16") {
  std::mt19937_64 rng(6);
  MultiDilatedLayer<double> md = make_md(8, 2, 4, DilationPattern::kExponential, rng);
  CHECK(md.sub_dilations == std::vector<std::int64_t>{1, 2, 4, 8, 16});
}

TEST_CASE("md_forward equals independent per-chunk convolutions") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t bc = 4, k = 3, layer = 1 + trial % 4, t_len = 9 + trial;
    MultiDilatedLayer<double> md = make_md(bc, k, layer,
                                           trial % 2 ? DilationPattern::kLinear
                                                     : DilationPattern::kExponential,
                                           rng);
    Tensor<double> x = random_tensor({bc + layer * k, t_len}, rng);

    Tape<double> tape;
    ForwardCtx<double> ctx{tape, RunOptions{Mode::kEval, false, true, nullptr}, nullptr, nullptr};
    int y = md.forward(ctx, constant(tape, x), "md");

    Tensor<double> want = Tensor<double>::zeros({k, t_len});
    std::int64_t at = 0;
    for (std::size_t i = 0; i < md.sub_weights.size(); ++i) {
      const std::int64_t w_i = md.sub_weights[i].shape[1];
      Tensor<double> chunk = Tensor<double>::zeros({w_i, t_len});
      for (std::int64_t c = 0; c < w_i; ++c)
        for (std::int64_t t = 0; t < t_len; ++t) chunk.at2(c, t) = x.at2(at + c, t);
      const Tensor<double> part =
          conv1d_reference(chunk, md.sub_weights[i], md.sub_dilations[i], PadMode::kSame);
      for (std::size_t j = 0; j < want.data.size(); ++j) want.data[j] += part.data[j];
      at += w_i;
    }
    for (std::size_t j = 0; j < want.data.size(); ++j)
      CHECK(std::abs(tape.value(y).data[j] - want.data[j]) < 1e-12);
  }
}

TEST_CASE("md_forward reports the offending chunk on width mismatch") {
  std::mt19937_64 rng(8);
  MultiDilatedLayer<double> md = make_md(4, 3, 2, DilationPattern::kExponential, rng);
  Tape<double> tape;
  ForwardCtx<double> ctx{tape, RunOptions{}, nullptr, nullptr};
  std::vector<int> chunks{constant(tape, Tensor<double>::zeros({4, 9})),
                          constant(tape, Tensor<double>::zeros({2, 9})),
                          constant(tape, Tensor<double>::zeros({3, 9}))};
  CHECK_THROWS_WITH_AS(md.forward_chunks(ctx, chunks, "md"), doctest::Contains("chunk 1"),
                       ConfigError);
}

TEST_CASE("every layer type preserves the temporal length") {
  std::mt19937_64 rng(9);
  for (std::int64_t t_len : {1, 5, 29}) {
    Tensor<double> x = random_tensor({6, t_len}, rng);
    Tape<double> tape;
    ForwardCtx<double> ctx{tape, RunOptions{Mode::kEval, false, false, nullptr}, nullptr, nullptr};
    int xc = constant(tape, x);

    TcLayer<double> tc = make_tc(6, 4, 2, 0.0, rng);
    CHECK(tape.value(tc.forward(ctx, xc, "tc")).shape == Shape{4, t_len});

    BottleneckLayer<double> bn;
    bn.weight = random_tensor({3, 6, 1}, rng);
    bn.bn = BnParams<double>::init(3);
    CHECK(tape.value(bn.forward(ctx, xc, "bn")).shape == Shape{3, t_len});

    MultiDilatedLayer<double> md = make_md(6, 2, 0, DilationPattern::kExponential, rng);
    CHECK(tape.value(md.forward(ctx, xc, "md")).shape == Shape{2, t_len});
  }
}

TEST_CASE("gradients flow through md_forward") {
  std::mt19937_64 rng(10);
  MultiDilatedLayer<double> md = make_md(3, 2, 2, DilationPattern::kExponential, rng);
  Tensor<double> x = random_tensor({3 + 2 * 2, 10}, rng);

  auto forward = [&](bool want_grads) {
    Tape<double> tape;
    ParamLease<double> lease;
    ForwardCtx<double> ctx{tape, RunOptions{Mode::kTrain, false, false, nullptr}, &lease, nullptr};
    int y = md.forward(ctx, constant(tape, x), "md");
    int loss = sum_all(tape, mul(tape, y, y, "sq"));
    if (!want_grads) return std::make_pair(tape.value(loss).data[0], std::vector<Tensor<double>>{});
    tape.backward(loss);
    std::vector<Tensor<double>> grads;
    for (const auto& e : lease.entries) grads.push_back(tape.grad(e.leaf));
    return std::make_pair(tape.value(loss).data[0], grads);
  };

  std::vector<std::pair<std::string, Tensor<double>*>> params;
  params.emplace_back("sub0/w", &md.sub_weights[0]);
  params.emplace_back("sub1/w", &md.sub_weights[1]);
  params.emplace_back("sub2/w", &md.sub_weights[2]);
  params.emplace_back("bn.gamma", &md.bn.gamma);
  params.emplace_back("bn.beta", &md.bn.beta);
  // lease order in forward: sub0/w, sub1/w, sub2/w, bn.gamma, bn.beta
  std::vector<testutil::FdFailure> failures;
  bool ok = testutil::check_gradients(
      params, [&]() { return forward(false).first; },
      [&]() { return forward(true).second; }, rng, &failures);
  for (const auto& f : failures)
    MESSAGE(f.name, "[", f.index, "] analytic=", f.analytic, " numeric=", f.numeric);
  CHECK(ok);
}

TEST_CASE("per-sub-layer normalization variant stays shape compatible") {
  std::mt19937_64 rng(11);
  MultiDilatedLayer<double> md = make_md(4, 3, 2, DilationPattern::kExponential, rng);
  md.per_sub_bn = true;
  for (int i = 0; i < 3; ++i) md.sub_bn.push_back(BnParams<double>::init(3));
  Tensor<double> x = random_tensor({4 + 2 * 3, 12}, rng);
  Tape<double> tape;
  ForwardCtx<double> ctx{tape, RunOptions{Mode::kEval, false, false, nullptr}, nullptr, nullptr};
  CHECK(tape.value(md.forward(ctx, constant(tape, x), "md")).shape == Shape{3, 12});
}
