#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "td3net/dataset.hpp"
#include "td3net/network.hpp"

namespace td3 {

// lr_final + (lr_init - lr_final) * (1 + cos(pi * step / total)) / 2, with
// the endpoints returned exactly.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_init,
                        double lr_final) {
  if (total_steps <= 0) throw UsageError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps)
    throw UsageError("cosine_lr: step outside [0, total_steps]");
  if (step == 0) return lr_init;
  if (step == total_steps) return lr_final;
  const double phase = M_PI * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(phase));
}

template <typename S>
struct AdamWState {
  std::vector<std::string> names;
  std::vector<Tensor<S>> m, v;
  std::int64_t step = 0;
};

// Decoupled weight decay: parameters are scaled by (1 - lr*wd) before the
// bias-corrected adaptive update.
template <typename S>
void adamw_step(const std::vector<ParamRef<S>>& params, const std::vector<Tensor<S>>& grads,
                AdamWState<S>& state, double lr, double weight_decay, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8) {
  if (params.size() != grads.size())
    throw UsageError("adamw_step: gradient count does not match parameter count");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.names.push_back(p.name);
      state.m.push_back(Tensor<S>::zeros(p.tensor->shape));
      state.v.push_back(Tensor<S>::zeros(p.tensor->shape));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<S>& p = *params[pi].tensor;
    const Tensor<S>& g = grads[pi];
    if (g.shape != p.shape)
      throw UsageError("adamw_step: gradient shape mismatch for " + params[pi].name);
    require_finite(g, "gradient of " + params[pi].name);
    Tensor<S>& m = state.m[pi];
    Tensor<S>& v = state.v[pi];
    const S decay = static_cast<S>(1.0 - lr * weight_decay);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      p.data[i] *= decay;
      m.data[i] = static_cast<S>(beta1) * m.data[i] + static_cast<S>(1.0 - beta1) * g.data[i];
      v.data[i] =
          static_cast<S>(beta2) * v.data[i] + static_cast<S>(1.0 - beta2) * g.data[i] * g.data[i];
      const double mhat = static_cast<double>(m.data[i]) / c1;
      const double vhat = static_cast<double>(v.data[i]) / c2;
      p.data[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + eps));
    }
    require_finite(p, "parameter " + params[pi].name + " after optimizer step");
  }
}

inline double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  if (a + b == 0.0) return 0.5;
  return a / (a + b);
}

template <typename S>
struct MixupBatch {
  Tensor<S> x;  // [N,C,T]
  Tensor<S> y;  // [N,K] soft targets
  double lambda = 1.0;
};

template <typename S>
MixupBatch<S> mixup_with(const Tensor<S>& x, const Tensor<S>& y, double lambda,
                         const std::vector<std::int64_t>& perm) {
  const std::int64_t batch = x.shape[0];
  if (static_cast<std::int64_t>(perm.size()) != batch)
    throw UsageError("mixup: permutation size mismatch");
  MixupBatch<S> out{x, y, lambda};
  const std::int64_t x_item = x.numel() / batch;
  const std::int64_t y_item = y.numel() / batch;
  // Normalize the coefficient pair so that lam + (1-lam) is exact in S and
  // one-hot target rows keep a row sum of exactly 1.
  S lam = static_cast<S>(lambda);
  S mu = S(1) - lam;
  if (lam < S(0.5)) lam = S(1) - mu;
  out.lambda = static_cast<double>(lam);
  for (std::int64_t n = 0; n < batch; ++n) {
    const std::int64_t o = perm[static_cast<std::size_t>(n)];
    for (std::int64_t i = 0; i < x_item; ++i)
      out.x.data[static_cast<std::size_t>(n * x_item + i)] =
          lam * x.data[static_cast<std::size_t>(n * x_item + i)] +
          mu * x.data[static_cast<std::size_t>(o * x_item + i)];
    for (std::int64_t i = 0; i < y_item; ++i)
      out.y.data[static_cast<std::size_t>(n * y_item + i)] =
          lam * y.data[static_cast<std::size_t>(n * y_item + i)] +
          mu * y.data[static_cast<std::size_t>(o * y_item + i)];
  }
  return out;
}

// One lambda ~ Beta(alpha, alpha) and one permutation per batch; alpha == 0
// leaves the batch untouched.
template <typename S>
MixupBatch<S> mixup(const Tensor<S>& x, const Tensor<S>& y, double alpha, std::mt19937_64& rng) {
  if (alpha < 0.0) throw ConfigError("mixup: alpha must be >= 0");
  if (alpha == 0.0) return MixupBatch<S>{x, y, 1.0};
  const double lambda = sample_beta(alpha, rng);
  std::vector<std::int64_t> perm(static_cast<std::size_t>(x.shape[0]));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return mixup_with(x, y, lambda, perm);
}

struct EpochRow {
  std::int64_t epoch = 0;
  double lr = 0, train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
  double wall_sec = 0;  // reported on stdout, not part of the deterministic log
};

struct EvalResult {
  double accuracy = 0;
  double mean_loss = 0;
  std::int64_t classes = 0;
  std::vector<std::int64_t> confusion;  // classes x classes, row = true label

  std::int64_t correct() const {
    std::int64_t c = 0;
    for (std::int64_t i = 0; i < classes; ++i)
      c += confusion[static_cast<std::size_t>(i * classes + i)];
    return c;
  }
};

template <typename S>
Tensor<S> stack_batch(const std::vector<Tensor<S>>& xs, const std::vector<std::int64_t>& idx) {
  const std::int64_t n = static_cast<std::int64_t>(idx.size());
  const Shape& s = xs[static_cast<std::size_t>(idx[0])].shape;
  Tensor<S> out = Tensor<S>::zeros({n, s[0], s[1]});
  const std::int64_t item = s[0] * s[1];
  for (std::int64_t i = 0; i < n; ++i)
    std::copy(xs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])].data.begin(),
              xs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])].data.end(),
              out.data.begin() + i * item);
  return out;
}

template <typename S>
EvalResult evaluate(Network<S>& net, const std::vector<Tensor<S>>& xs,
                    const std::vector<std::int64_t>& labels, std::int64_t batch_size,
                    std::int64_t classes) {
  if (xs.empty()) throw UsageError("evaluate: empty dataset");
  EvalResult res;
  res.classes = classes;
  res.confusion.assign(static_cast<std::size_t>(classes * classes), 0);
  double loss_sum = 0;
  const std::int64_t n = static_cast<std::int64_t>(xs.size());
  for (std::int64_t at = 0; at < n; at += batch_size) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = at; i < std::min(n, at + batch_size); ++i) idx.push_back(i);
    Tensor<S> bx = stack_batch(xs, idx);
    std::vector<std::int64_t> by;
    for (auto i : idx) by.push_back(labels[static_cast<std::size_t>(i)]);

    Tape<S> tape;
    RunOptions opts;
    opts.mode = Mode::kEval;
    auto fwd = net.forward(tape, bx, opts, false, false);
    int loss = cross_entropy(tape, fwd.logits, by, "eval/loss");
    loss_sum += static_cast<double>(tape.value(loss).data[0]) * static_cast<double>(idx.size());
    const Tensor<S>& logits = tape.value(fwd.logits);
    for (std::size_t row = 0; row < idx.size(); ++row) {
      std::int64_t arg = 0;
      for (std::int64_t c = 1; c < logits.shape[1]; ++c)
        if (logits.at2(static_cast<std::int64_t>(row), c) >
            logits.at2(static_cast<std::int64_t>(row), arg))
          arg = c;
      res.confusion[static_cast<std::size_t>(by[row] * classes + arg)]++;
    }
  }
  res.mean_loss = loss_sum / static_cast<double>(n);
  res.accuracy = static_cast<double>(res.correct()) / static_cast<double>(n);
  return res;
}

template <typename S>
struct TrainOutput {
  std::vector<EpochRow> log;
  Network<S> net;            // final state
  AdamWState<S> opt;
  Network<S> best_net;       // highest validation accuracy (earliest on ties)
  AdamWState<S> best_opt;
  std::int64_t best_epoch = 0;
  std::int64_t steps = 0;
  std::string rng_data, rng_mixup, rng_dropout;
  ModelConfig resolved_model;  // with the recipe's dropout and dataset shape applied
};

// Desk-scale supervised training on the synthetic task. All randomness
// derives from `master_seed` through the init/data/mixup/dropout streams.
template <typename S>
TrainOutput<S> train(ModelConfig model_cfg, const TrainConfig& cfg, std::uint64_t master_seed,
                     std::ostream* progress = nullptr) {
  cfg.validate();
  model_cfg.dropout = cfg.dropout;  // the recipe owns the regularization knob
  model_cfg.in_channels = cfg.dataset.channels;
  model_cfg.num_classes = cfg.dataset.classes;
  model_cfg.seq_len = cfg.dataset.seq_len;
  model_cfg.validate();

  TrainOutput<S> out{
      {}, Network<S>(plan_network(model_cfg)), {}, Network<S>(plan_network(model_cfg)), {}, 0, 0,
      "", "", "", model_cfg};
  out.net.init_params(master_seed);

  FeatureSet train_set = synth_features(cfg.dataset, false);
  FeatureSet val_set = synth_features(cfg.dataset, true);
  auto to_s = [](const FeatureSet& fs) {
    std::vector<Tensor<S>> xs;
    xs.reserve(fs.x.size());
    for (const auto& t : fs.x) xs.push_back(t.template cast<S>());
    return xs;
  };
  std::vector<Tensor<S>> train_x = to_s(train_set), val_x = to_s(val_set);

  auto rng_data = make_stream(master_seed, "data");
  auto rng_mixup = make_stream(master_seed, "mixup");
  auto rng_dropout = make_stream(master_seed, "dropout");

  const std::int64_t classes = cfg.dataset.classes;
  double best_acc = -1.0;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr =
        cosine_lr(epoch, std::max<std::int64_t>(1, cfg.epochs - 1), cfg.lr_init, cfg.lr_final);

    std::vector<std::int64_t> order(train_x.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_data);

    double loss_sum = 0;
    std::int64_t correct = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::int64_t> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                                    order.begin() +
                                        static_cast<std::ptrdiff_t>(std::min(
                                            order.size(), at + static_cast<std::size_t>(cfg.batch_size))));
      Tensor<S> bx = stack_batch(train_x, idx);
      const std::int64_t bn = static_cast<std::int64_t>(idx.size());
      Tensor<S> by = Tensor<S>::zeros({bn, classes});
      std::vector<std::int64_t> by_int;
      for (std::int64_t i = 0; i < bn; ++i) {
        by_int.push_back(train_set.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
        by.at2(i, by_int.back()) = S(1);
      }
      MixupBatch<S> mixed = mixup(bx, by, cfg.mixup_alpha, rng_mixup);

      Tape<S> tape;
      RunOptions opts;
      opts.mode = Mode::kTrain;
      opts.update_running = true;
      opts.dropout_stream = &rng_dropout;
      auto fwd = out.net.forward(tape, mixed.x, opts, true, false);
      int y_node = constant(tape, mixed.y, "train/targets");
      int loss = cross_entropy(tape, fwd.logits, y_node, "train/loss");
      loss_sum += static_cast<double>(tape.value(loss).data[0]) * static_cast<double>(bn);
      const Tensor<S>& logits = tape.value(fwd.logits);
      for (std::int64_t i = 0; i < bn; ++i) {
        std::int64_t arg = 0;
        for (std::int64_t c = 1; c < classes; ++c)
          if (logits.at2(i, c) > logits.at2(i, arg)) arg = c;
        if (arg == by_int[static_cast<std::size_t>(i)]) ++correct;
      }

      tape.backward(loss);
      std::unordered_map<std::string, int> leaf_of;
      for (const auto& [name, id] : fwd.param_leaves) leaf_of[name] = id;
      auto params = out.net.param_registry();
      std::vector<Tensor<S>> grads;
      grads.reserve(params.size());
      for (const auto& ref : params) grads.push_back(tape.grad(leaf_of.at(ref.name)));

      if (cfg.grad_clip > 0.0) {
        double sq = 0;
        for (const auto& g : grads)
          for (S v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) {
          const S scale = static_cast<S>(cfg.grad_clip / norm);
          for (auto& g : grads)
            for (S& v : g.data) v *= scale;
        }
      }
      adamw_step(params, grads, out.opt, lr, cfg.weight_decay);
      ++out.steps;
    }

    EvalResult val = evaluate(out.net, val_x, val_set.labels, cfg.batch_size, classes);
    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(train_x.size());
    row.train_acc = static_cast<double>(correct) / static_cast<double>(train_x.size());
    row.val_loss = val.mean_loss;
    row.val_acc = val.accuracy;
    row.wall_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.log.push_back(row);
    if (progress)
      (*progress) << "epoch " << epoch << " lr " << lr << " train_loss " << row.train_loss
                  << " train_acc " << row.train_acc << " val_loss " << row.val_loss << " val_acc "
                  << row.val_acc << " wall " << row.wall_sec << "s\n";

    if (val.accuracy > best_acc) {
      best_acc = val.accuracy;
      out.best_net = out.net;
      out.best_opt = out.opt;
      out.best_epoch = epoch;
    }
  }

  if (cfg.epochs == 0) {  // untrained checkpoint, empty log body
    out.best_net = out.net;
    out.best_opt = out.opt;
  }
  out.rng_data = serialize_engine(rng_data);
  out.rng_mixup = serialize_engine(rng_mixup);
  out.rng_dropout = serialize_engine(rng_dropout);
  return out;
}

}  // namespace td3
